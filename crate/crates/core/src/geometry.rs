//! Rigid-body transform algebra.
//!
//! Poses are camera-to-world transforms. Rotations travel through three
//! encodings: unit quaternions (how the reconstruction files store them),
//! 3x3 matrices (how the algebra is done), and the continuous 6D encoding
//! made of the first two matrix columns (what the policy regresses).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum quaternion norm accepted before normalization.
pub const QUAT_MIN_NORM: f64 = 1e-12;

/// Minimum angle (radians) between the two 6D columns for Gram-Schmidt recovery.
pub const ROT6D_MIN_ANGLE: f64 = 1e-6;

/// Rotation quaternion, scalar first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > QUAT_MIN_NORM) {
            return Err(Error::Degenerate(format!("quaternion norm {n:e} is too small")));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Normalized, with the sign flipped so that `w >= 0`.
    pub fn canonical(&self) -> Result<Self> {
        let q = self.normalized()?;
        Ok(if q.w < 0.0 { -q } else { q })
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl std::ops::Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat3(pub Matrix3<f64>);

impl RotMat3 {
    pub fn identity() -> Self {
        RotMat3(Matrix3::identity())
    }

    /// Build from nine row-major scalars without validation.
    pub fn from_row_major(r: [f64; 9]) -> Self {
        RotMat3(Matrix3::from_row_slice(&r))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Rotation about the z axis by `theta` radians.
    pub fn rot_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        RotMat3(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` about the (not necessarily unit) `axis`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) {
            return Err(Error::Degenerate("zero rotation axis".into()));
        }
        let q = Quaternion::new(
            (angle / 2.0).cos(),
            axis.x / n * (angle / 2.0).sin(),
            axis.y / n * (angle / 2.0).sin(),
            axis.z / n * (angle / 2.0).sin(),
        );
        quat_to_rotmat(&q)
    }

    pub fn transpose(&self) -> Self {
        RotMat3(self.0.transpose())
    }

    pub fn mul(&self, other: &RotMat3) -> RotMat3 {
        RotMat3(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Max deviation of RᵀR from I and of det(R) from +1.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Matrix3::identity()).abs().max();
        e.max((self.0.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.orthonormality_error() <= tol
    }

    /// Canonical (w >= 0) unit quaternion for this rotation.
    pub fn to_quat(&self) -> Quaternion {
        let m = &self.0;
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        // A valid rotation never yields a zero quaternion here.
        q.canonical().unwrap_or(Quaternion::IDENTITY)
    }
}

/// First two columns of a rotation matrix, column-major:
/// `[a1.x, a1.y, a1.z, a2.x, a2.y, a2.z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub fn identity() -> Self {
        Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    pub fn columns(&self) -> (Vector3<f64>, Vector3<f64>) {
        let a = &self.0;
        (
            Vector3::new(a[0], a[1], a[2]),
            Vector3::new(a[3], a[4], a[5]),
        )
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: RotMat3,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: RotMat3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotMat3, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(RotMat3::identity(), t)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt.0 * self.translation))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation.mul(&other.rotation),
            self.rotation.0 * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p + self.translation
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.is_valid(tol) && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Motion between two consecutive poses, expressed in the earlier camera's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDelta {
    pub dx: Vector3<f64>,
    pub rot: RotMat3,
}

impl ActionDelta {
    pub fn as_pose(&self) -> Pose {
        Pose::new(self.rot, self.dx)
    }
}

/// Statistic of the per-step translation norms that is forced to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStatistic {
    #[default]
    Mean,
    Max,
    Sum,
}

pub fn quat_to_rotmat(q: &Quaternion) -> Result<RotMat3> {
    let Quaternion { w, x, y, z } = q.normalized()?;
    Ok(RotMat3(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )))
}

pub fn rotmat_to_6d(r: &RotMat3) -> Rot6D {
    let m = &r.0;
    Rot6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

/// Gram-Schmidt recovery of a rotation from a (possibly unnormalized) 6D vector.
pub fn rot6d_to_rotmat(w: &Rot6D) -> Result<RotMat3> {
    let (a1, a2) = w.columns();
    let (n1, n2) = (a1.norm(), a2.norm());
    if !(n1 > 0.0 && n2 > 0.0) || !n1.is_finite() || !n2.is_finite() {
        return Err(Error::Degenerate("6D rotation has a zero or non-finite column".into()));
    }
    let sin_angle = a1.cross(&a2).norm() / (n1 * n2);
    if !(sin_angle > ROT6D_MIN_ANGLE.sin()) {
        return Err(Error::Degenerate("6D rotation columns are collinear".into()));
    }
    let b1 = a1 / n1;
    let b2 = (a2 - b1 * b1.dot(&a2)).normalize();
    let b3 = b1.cross(&b2);
    Ok(RotMat3(Matrix3::from_columns(&[b1, b2, b3])))
}

/// `T_t⁻¹ ∘ T_{t+1}`.
pub fn relative_pose(from: &Pose, to: &Pose) -> ActionDelta {
    let d = from.inverse().compose(to);
    ActionDelta {
        dx: d.translation,
        rot: d.rotation,
    }
}

pub fn normalize_trajectory(deltas: &[ActionDelta]) -> Result<Vec<ActionDelta>> {
    normalize_trajectory_with(deltas, NormStatistic::Mean)
}

/// Uniformly rescale translations so the chosen statistic of step norms is 1.
pub fn normalize_trajectory_with(
    deltas: &[ActionDelta],
    stat: NormStatistic,
) -> Result<Vec<ActionDelta>> {
    let norms: Vec<f64> = deltas.iter().map(|d| d.dx.norm()).collect();
    if !norms.iter().any(|&n| n > 1e-12) {
        return Err(Error::DegenerateTrajectory(
            "all translation steps are zero".into(),
        ));
    }
    let scale = match stat {
        NormStatistic::Mean => norms.iter().sum::<f64>() / norms.len() as f64,
        NormStatistic::Max => norms.iter().cloned().fold(0.0, f64::max),
        NormStatistic::Sum => norms.iter().sum::<f64>(),
    };
    Ok(deltas
        .iter()
        .map(|d| ActionDelta {
            dx: d.dx / scale,
            rot: d.rot,
        })
        .collect())
}

/// Mirror across the camera's vertical image axis: `M R M` with `M = diag(-1, 1, 1)`.
pub fn conjugate_reflect(r: &RotMat3) -> RotMat3 {
    let mut m = r.0;
    // Entries with exactly one index equal to 0 flip sign.
    for i in 0..3 {
        for j in 0..3 {
            if (i == 0) != (j == 0) {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
    RotMat3(m)
}

/// [`conjugate_reflect`] acting directly on the 6D encoding (exact sign flips).
pub fn conjugate_reflect_6d(w: &Rot6D) -> Rot6D {
    let a = w.0;
    Rot6D([a[0], -a[1], -a[2], -a[3], a[4], a[5]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut impl Rng) -> Quaternion {
        loop {
            let q = Quaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if q.norm() > 0.1 {
                return q.normalized().unwrap();
            }
        }
    }

    /// Rodrigues' formula from the axis-angle form of `q`.
    fn rodrigues(q: &Quaternion) -> Matrix3<f64> {
        let q = q.normalized().unwrap();
        let angle = 2.0 * q.w.clamp(-1.0, 1.0).acos();
        let s = (1.0 - q.w * q.w).sqrt();
        if s < 1e-12 {
            return Matrix3::identity();
        }
        let k = Vector3::new(q.x / s, q.y / s, q.z / s);
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
    }

    #[test]
    fn identity_quaternion() {
        let r = quat_to_rotmat(&Quaternion::IDENTITY).unwrap();
        assert_eq!(r.0, Matrix3::identity());
    }

    #[test]
    fn pi_about_x() {
        let r = quat_to_rotmat(&Quaternion::new(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(r.0, Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
    }

    #[test]
    fn zero_quaternion_is_degenerate() {
        let err = quat_to_rotmat(&Quaternion::new(0.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert_eq!(err.kind(), "degenerate_input");
    }

    #[test]
    fn quaternion_matches_rodrigues() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let q = random_quat(&mut rng);
            let r = quat_to_rotmat(&q).unwrap();
            assert!((r.0 - rodrigues(&q)).norm() < 1e-12);
            let neg = quat_to_rotmat(&-q).unwrap();
            assert!((r.0 - neg.0).norm() < 1e-15);
            assert!(r.orthonormality_error() < 1e-12);
        }
    }

    #[test]
    fn rotmat_quat_round_trip_is_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let q = random_quat(&mut rng).canonical().unwrap();
            let back = quat_to_rotmat(&q).unwrap().to_quat();
            assert!(back.w >= 0.0);
            let d = (back.w - q.w).abs() + (back.x - q.x).abs() + (back.y - q.y).abs() + (back.z - q.z).abs();
            assert!(d < 1e-12, "{q:?} vs {back:?}");
        }
    }

    #[test]
    fn six_d_identity() {
        assert_eq!(rotmat_to_6d(&RotMat3::identity()), Rot6D::identity());
        assert_eq!(rot6d_to_rotmat(&Rot6D::identity()).unwrap(), RotMat3::identity());
    }

    #[test]
    fn six_d_perturbed_is_orthonormal() {
        let r = rot6d_to_rotmat(&Rot6D([1.0, 0.1, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert!(r.orthonormality_error() < 1e-12);
        // First column keeps the direction of a1.
        let a1 = Vector3::new(1.0, 0.1, 0.0).normalize();
        assert!((r.0.column(0) - a1).norm() < 1e-12);
        // Second column lies in span(a1, a2) and is orthogonal to a1.
        assert!(r.0.column(1).dot(&a1).abs() < 1e-12);
        assert!(r.0.column(2).dot(&Vector3::z()) > 0.999);
    }

    #[test]
    fn six_d_collinear_is_degenerate() {
        let err = rot6d_to_rotmat(&Rot6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).unwrap_err();
        assert_eq!(err.kind(), "degenerate_input");
        assert!(rot6d_to_rotmat(&Rot6D([0.0; 6])).is_err());
        assert!(rot6d_to_rotmat(&Rot6D([1.0, 0.0, 0.0, 1.0, 1e-9, 0.0])).is_err());
    }

    #[test]
    fn relative_pose_simple_cases() {
        let d = relative_pose(&Pose::identity(), &Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        assert_eq!(d.dx, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(d.rot, RotMat3::identity());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Pose::new(
            quat_to_rotmat(&random_quat(&mut rng)).unwrap(),
            Vector3::new(0.3, -2.0, 1.5),
        );
        let d = relative_pose(&p, &p);
        assert!(d.dx.norm() < 1e-15);
        assert!((d.rot.0 - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn relative_pose_matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| {
                Pose::new(
                    quat_to_rotmat(&random_quat(rng)).unwrap(),
                    Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                )
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let h = |p: &Pose| {
                let mut m = nalgebra::Matrix4::identity();
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.rotation.0);
                m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
                m
            };
            let oracle = h(&a).try_inverse().unwrap() * h(&b);
            let d = relative_pose(&a, &b);
            assert!((oracle.fixed_view::<3, 3>(0, 0) - d.rot.0).abs().max() < 1e-12);
            assert!((oracle.fixed_view::<3, 1>(0, 3) - d.dx).abs().max() < 1e-12);
            let back = a.compose(&d.as_pose());
            assert!((back.translation - b.translation).abs().max() < 1e-9);
            assert!((back.rotation.0 - b.rotation.0).abs().max() < 1e-9);
        }
    }

    fn tdelta(x: f64, y: f64, z: f64) -> ActionDelta {
        ActionDelta {
            dx: Vector3::new(x, y, z),
            rot: RotMat3::identity(),
        }
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_trajectory(&[tdelta(2.0, 0.0, 0.0), tdelta(4.0, 0.0, 0.0)]).unwrap();
        assert!((out[0].dx.x - 2.0 / 3.0).abs() < 1e-15);
        assert!((out[1].dx.x - 4.0 / 3.0).abs() < 1e-15);
        let out = normalize_trajectory(&[tdelta(5.0, 0.0, 0.0)]).unwrap();
        assert_eq!(out[0].dx, Vector3::new(1.0, 0.0, 0.0));
        let err = normalize_trajectory(&[tdelta(0.0, 0.0, 0.0); 3]).unwrap_err();
        assert_eq!(err.kind(), "degenerate_trajectory");
        assert!(normalize_trajectory(&[]).is_err());
    }

    #[test]
    fn normalize_alternative_statistics() {
        let d = [tdelta(1.0, 0.0, 0.0), tdelta(0.0, 3.0, 0.0)];
        let max = normalize_trajectory_with(&d, NormStatistic::Max).unwrap();
        assert_eq!(max[1].dx.y, 1.0);
        let sum = normalize_trajectory_with(&d, NormStatistic::Sum).unwrap();
        assert_eq!(sum[0].dx.x, 0.25);
    }

    #[test]
    fn reflect_examples() {
        assert_eq!(conjugate_reflect(&RotMat3::identity()), RotMat3::identity());
        for theta in [0.3, -1.2, 2.5] {
            let r = conjugate_reflect(&RotMat3::rot_z(theta));
            assert!((r.0 - RotMat3::rot_z(-theta).0).abs().max() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r = quat_to_rotmat(&random_quat(&mut rng)).unwrap();
            let m = conjugate_reflect(&r);
            assert!(m.orthonormality_error() < 1e-12);
            let mirror = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
            assert!((m.0 - mirror * r.0 * mirror).abs().max() == 0.0);
            assert_eq!(conjugate_reflect(&m), r);
            assert_eq!(conjugate_reflect_6d(&rotmat_to_6d(&r)), rotmat_to_6d(&m));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn quat_strategy() -> impl Strategy<Value = Quaternion> {
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
                .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 0.01)
                .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z))
        }

        proptest! {
            #[test]
            fn six_d_round_trip(q in quat_strategy()) {
                let r = quat_to_rotmat(&q).unwrap();
                let back = rot6d_to_rotmat(&rotmat_to_6d(&r)).unwrap();
                prop_assert!((r.0 - back.0).norm() < 1e-9);
            }

            #[test]
            fn normalize_is_idempotent_and_preserves_ratios(
                steps in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64), 1..30)
            ) {
                let deltas: Vec<_> = steps.iter().map(|&(x, y, z)| tdelta(x, y, z)).collect();
                prop_assume!(deltas.iter().any(|d| d.dx.norm() > 1e-6));
                let once = normalize_trajectory(&deltas).unwrap();
                let twice = normalize_trajectory(&once).unwrap();
                let mean = once.iter().map(|d| d.dx.norm()).sum::<f64>() / once.len() as f64;
                prop_assert!((mean - 1.0).abs() < 1e-9);
                for (a, b) in once.iter().zip(&twice) {
                    prop_assert!((a.dx - b.dx).norm() < 1e-9);
                }
                let k = deltas.iter().position(|d| d.dx.norm() > 1e-6).unwrap();
                for (d, n) in deltas.iter().zip(&once) {
                    let raw = d.dx.norm() / deltas[k].dx.norm();
                    let scaled = n.dx.norm() / once[k].dx.norm();
                    prop_assert!((raw - scaled).abs() < 1e-9 * raw.max(1.0));
                }
            }
        }
    }
}
