use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CameraConfig, SimConfig, TaskSpec};
use crate::dataset::Task;
use crate::geometry::{Pose, RotMat3};
use crate::gripper::GripperState;

pub const ARENA_HALF: f64 = 0.5;
pub const TIP_Z_MIN: f64 = 0.004;
pub const TIP_Z_MAX: f64 = 0.2;
const SUBSTEP: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Disc { radius: f64 },
    /// Square footprint.
    Block { half: f64, yaw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub center: [f64; 2],
    pub z0: f64,
    pub z1: f64,
    pub shape: Shape,
    pub color: [f32; 3],
}

impl Body {
    pub fn height(&self) -> f64 {
        self.z1 - self.z0
    }

    /// Whether `p` lies in the footprint scaled by `scale`.
    pub fn contains(&self, p: [f64; 2], scale: f64) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        match self.shape {
            Shape::Disc { radius } => dx.hypot(dy) <= radius * scale,
            Shape::Block { half, yaw } => {
                let (s, c) = yaw.sin_cos();
                let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
                lx.abs() <= half * scale && ly.abs() <= half * scale
            }
        }
    }

    /// Footprint sample points on a regular `n × n` grid.
    pub fn footprint_samples(&self, n: usize) -> Vec<[f64; 2]> {
        let (half, yaw) = match self.shape {
            Shape::Disc { radius } => (radius, 0.0),
            Shape::Block { half, yaw } => (half, yaw),
        };
        let (s, c) = yaw.sin_cos();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let u = ((i as f64 + 0.5) / n as f64 * 2.0 - 1.0) * half;
                let v = ((j as f64 + 0.5) / n as f64 * 2.0 - 1.0) * half;
                let p = [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v];
                if self.contains(p, 1.0) {
                    out.push(p);
                }
            }
        }
        out
    }
}

/// Fraction of `top`'s footprint not supported by `base`.
pub fn overlap_error(top: &Body, base: &Body) -> f64 {
    let pts = top.footprint_samples(24);
    let outside = pts.iter().filter(|p| !base.contains(**p, 1.0)).count();
    outside as f64 / pts.len().max(1) as f64
}

/// A camera-frame motion and the gripper command for the next frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub dx: Vector3<f64>,
    pub rot: RotMat3,
    pub g: GripperState,
}

impl Action {
    pub fn hold(g: GripperState) -> Self {
        Self {
            dx: Vector3::zeros(),
            rot: RotMat3::identity(),
            g,
        }
    }

    /// The camera motion that carries the tool from its current pose to `(tip, yaw)`.
    pub fn between(cam: &CameraConfig, from: &WorldState, tip: &Vector3<f64>, yaw: f64, g: GripperState) -> Self {
        let a = cam.pose(&from.tip, from.yaw);
        let b = cam.pose(tip, yaw);
        let d = a.inverse().compose(&b);
        Self {
            dx: d.translation,
            rot: d.rotation,
            g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub task: Task,
    pub tip: Vector3<f64>,
    pub yaw: f64,
    pub gap: f64,
    pub gripper: GripperState,
    /// Push: the disc. Stack: the small block, then the large one.
    pub bodies: Vec<Body>,
    pub goal: Option<[f64; 2]>,
    pub goal_radius: f64,
    /// Held body and its center offset from the tip.
    pub held: Option<(usize, [f64; 2])>,
    pub t: usize,
    pub contacted: bool,
    pub grasped: bool,
    pub stacked: bool,
}

fn wrap(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

fn rot2(v: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

impl WorldState {
    /// A random layout for the scene.
    pub fn initial(spec: &TaskSpec, rng: &mut impl Rng) -> Self {
        let cfg = &spec.config;
        let ap = &spec.appearance;
        match spec.kind {
            Task::Push => {
                let r = ap.sizes[0];
                let o = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
                let th: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let dh = [th.cos(), th.sin()];
                let dg = rng.gen_range(0.05..0.08);
                let goal = [o[0] + dh[0] * dg, o[1] + dh[1] * dg];
                let contact = r + cfg.pusher_radius;
                let back = rot2([-dh[0], -dh[1]], rng.gen_range(-35f64..35.0).to_radians());
                let ds = contact + rng.gen_range(0.06..0.09);
                let tip = Vector3::new(o[0] + back[0] * ds, o[1] + back[1] * ds, cfg.push_height);
                let yaw = (o[1] - tip.y).atan2(o[0] - tip.x) + rng.gen_range(-15f64..15.0).to_radians();
                Self {
                    task: Task::Push,
                    tip,
                    yaw: wrap(yaw),
                    gap: cfg.open_gap,
                    gripper: GripperState::Open,
                    bodies: vec![Body {
                        center: o,
                        z0: 0.0,
                        z1: 0.03,
                        shape: Shape::Disc { radius: r },
                        color: ap.object_colors[0],
                    }],
                    goal: Some(goal),
                    goal_radius: cfg.goal_radius_factor * r,
                    held: None,
                    t: 0,
                    contacted: false,
                    grasped: false,
                    stacked: false,
                }
            }
            Task::Stack => {
                let (sa, sb) = (ap.sizes[0], ap.sizes[1]);
                let yaw: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let tip = Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), cfg.travel_height);
                let f = [yaw.cos(), yaw.sin()];
                let right = [f[1], -f[0]];
                let (da, la) = (rng.gen_range(0.04..0.07), rng.gen_range(-0.02..0.02));
                let a = [tip.x + f[0] * da + right[0] * la, tip.y + f[1] * da + right[1] * la];
                let dir = rot2(f, rng.gen_range(-20f64..20.0).to_radians());
                let db = rng.gen_range(0.065..0.085);
                let b = [a[0] + dir[0] * db, a[1] + dir[1] * db];
                let block = |c: [f64; 2], side: f64, h: f64, color, yaw| Body {
                    center: c,
                    z0: 0.0,
                    z1: h,
                    shape: Shape::Block { half: side / 2.0, yaw },
                    color,
                };
                let ya = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
                let yb = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
                Self {
                    task: Task::Stack,
                    tip,
                    yaw,
                    gap: cfg.open_gap,
                    gripper: GripperState::Open,
                    bodies: vec![
                        block(a, sa, sa, ap.object_colors[0], ya),
                        block(b, sb, 0.03, ap.object_colors[1], yb),
                    ],
                    goal: None,
                    goal_radius: 0.0,
                    held: None,
                    t: 0,
                    contacted: false,
                    grasped: false,
                    stacked: false,
                }
            }
        }
    }

    pub fn camera_pose(&self, cam: &CameraConfig) -> Pose {
        cam.pose(&self.tip, self.yaw)
    }

    pub fn success(&self) -> bool {
        match self.task {
            Task::Push => self.contacted && self.goal_distance() <= self.goal_radius,
            Task::Stack => self.stacked,
        }
    }

    pub fn goal_distance(&self) -> f64 {
        match self.goal {
            Some(g) => {
                let o = self.bodies[0].center;
                (g[0] - o[0]).hypot(g[1] - o[1])
            }
            None => f64::INFINITY,
        }
    }

    fn support_height(&self, idx: usize, center: [f64; 2]) -> f64 {
        self.bodies
            .iter()
            .enumerate()
            .filter(|(j, b)| *j != idx && matches!(b.shape, Shape::Block { .. }) && b.contains(center, 1.0))
            .map(|(_, b)| b.z1)
            .fold(0.0, f64::max)
    }

    /// Advance one step. Non-finite actions are treated as no motion.
    pub fn step(&self, a: &Action, cfg: &SimConfig) -> WorldState {
        let mut s = self.clone();
        let mut dx = if a.dx.iter().all(|v| v.is_finite()) {
            a.dx
        } else {
            Vector3::zeros()
        };
        if dx.norm() > cfg.max_step {
            dx *= cfg.max_step / dx.norm();
        }
        let rot = if a.rot.is_valid(1e-6) {
            a.rot
        } else {
            RotMat3::identity()
        };
        let moved = dx != Vector3::zeros() || rot != RotMat3::identity();
        if moved {
            let cam = self.camera_pose(&cfg.camera);
            let next = Pose::new(cam.rotation.mul(&rot), cam.translation + cam.rotation.apply(&dx));
            let (mut tip, yaw) = cfg.camera.tip_from_pose(&next);
            tip.x = tip.x.clamp(-ARENA_HALF, ARENA_HALF);
            tip.y = tip.y.clamp(-ARENA_HALF, ARENA_HALF);
            let mut zmin = TIP_Z_MIN;
            if let Some((i, off)) = self.held {
                let c = [tip.x + off[0], tip.y + off[1]];
                zmin = zmin.max(self.support_height(i, c) + self.bodies[i].height() / 2.0);
            }
            tip.z = tip.z.clamp(zmin, TIP_Z_MAX);
            s.push_along(&self.tip, &tip, cfg);
            s.tip = tip;
            s.yaw = wrap(yaw);
        }
        if a.g != self.gripper {
            s.gripper = a.g;
            match a.g {
                GripperState::Close => {
                    s.gap = cfg.closed_gap;
                    s.try_grasp();
                }
                GripperState::Open => {
                    s.gap = cfg.open_gap;
                    s.release(cfg);
                }
            }
        }
        if let Some((i, off)) = s.held {
            let h = s.bodies[i].height();
            let b = &mut s.bodies[i];
            b.center = [s.tip.x + off[0], s.tip.y + off[1]];
            b.z0 = (s.tip.z - h / 2.0).max(0.0);
            b.z1 = b.z0 + h;
        }
        s.t += 1;
        s
    }

    /// Quasi-static pushing of discs by the tool tip along its path.
    fn push_along(&mut self, from: &Vector3<f64>, to: &Vector3<f64>, cfg: &SimConfig) {
        let n = ((to - from).norm() / SUBSTEP).ceil().max(1.0) as usize;
        for k in 1..=n {
            let p = from + (to - from) * (k as f64 / n as f64);
            for b in &mut self.bodies {
                let Shape::Disc { radius } = b.shape else { continue };
                if p.z >= b.z1 {
                    continue;
                }
                let reach = radius + cfg.pusher_radius;
                let (dx, dy) = (b.center[0] - p.x, b.center[1] - p.y);
                let d = dx.hypot(dy);
                if d < reach {
                    let (nx, ny) = if d > 1e-12 {
                        (dx / d, dy / d)
                    } else {
                        let h = CameraConfig::heading(self.yaw);
                        (h.x, h.y)
                    };
                    b.center = [
                        (p.x + nx * reach).clamp(-ARENA_HALF, ARENA_HALF),
                        (p.y + ny * reach).clamp(-ARENA_HALF, ARENA_HALF),
                    ];
                    self.contacted = true;
                }
            }
        }
    }

    fn try_grasp(&mut self) {
        let tip = [self.tip.x, self.tip.y];
        let found = self.bodies.iter().position(|b| {
            matches!(b.shape, Shape::Block { .. })
                && b.contains(tip, 0.8)
                && self.tip.z <= b.z1 + 0.002
                && self.tip.z >= b.z0
        });
        // Only the top block of a pile can be picked.
        if let Some(i) = found {
            let c = self.bodies[i].center;
            let covered = self
                .bodies
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && o.z0 >= self.bodies[i].z1 - 1e-9 && self.bodies[i].contains(o.center, 1.0));
            if !covered {
                self.held = Some((i, [c[0] - tip[0], c[1] - tip[1]]));
                self.grasped = true;
                self.stacked = false;
            }
        }
    }

    fn release(&mut self, cfg: &SimConfig) {
        let Some((i, _)) = self.held.take() else { return };
        let h = self.bodies[i].height();
        let base = self.support_height(i, self.bodies[i].center);
        self.bodies[i].z0 = base;
        self.bodies[i].z1 = base + h;
        if self.task == Task::Stack && i == 0 && base > 0.0 {
            let err = overlap_error(&self.bodies[0], &self.bodies[1]);
            self.stacked = (self.bodies[0].z0 - self.bodies[1].z1).abs() < 1e-9 && err <= cfg.stack_tolerance;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(task: Task, seed: u64) -> (TaskSpec, WorldState) {
        let spec = TaskSpec::new(task, seed, SimConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = WorldState::initial(&spec, &mut rng);
        (spec, s)
    }

    #[test]
    fn zero_action_leaves_state_unchanged() {
        for task in [Task::Push, Task::Stack] {
            let (spec, s) = state(task, 1);
            let mut n = s.step(&Action::hold(GripperState::Open), &spec.config);
            assert_eq!(n.t, 1);
            n.t = 0;
            assert_eq!(n, s);
        }
    }

    #[test]
    fn translation_moves_tip_in_camera_frame() {
        let (spec, s) = state(Task::Push, 2);
        // Image-up is the heading direction.
        let a = Action { dx: Vector3::new(0.0, -0.005, 0.0), ..Action::hold(GripperState::Open) };
        let n = s.step(&a, &spec.config);
        let moved = n.tip - s.tip;
        assert!((moved - CameraConfig::heading(s.yaw) * 0.005).norm() < 1e-12);
        let big = Action { dx: Vector3::new(1.0, 0.0, 0.0), ..a };
        assert!(((s.step(&big, &spec.config).tip - s.tip).norm() - spec.config.max_step).abs() < 1e-9);
    }

    #[test]
    fn pushing_toward_goal_approaches_it() {
        let (spec, mut s) = state(Task::Push, 3);
        let o = s.bodies[0].center;
        let g = s.goal.unwrap();
        let d = Vector3::new(g[0] - o[0], g[1] - o[1], 0.0).normalize();
        let r = spec.appearance.sizes[0] + spec.config.pusher_radius;
        s.tip = Vector3::new(o[0], o[1], spec.config.push_height) - d * (r + 0.002);
        let mut last = s.goal_distance();
        for _ in 0..8 {
            let target = s.tip + d * 0.006;
            s = s.step(&Action::between(&spec.config.camera, &s, &target, s.yaw, GripperState::Open), &spec.config);
            let now = s.goal_distance();
            assert!(now < last, "{now} >= {last}");
            last = now;
        }
        assert!(s.contacted);
    }

    #[test]
    fn grasp_lift_and_place() {
        let (spec, mut s) = state(Task::Stack, 4);
        let cfg = spec.config;
        let a = s.bodies[0];
        let mv = |s: &WorldState, p: Vector3<f64>, g| s.step(&Action::between(&cfg.camera, s, &p, s.yaw, g), &cfg);
        s.tip = Vector3::new(a.center[0], a.center[1], a.z1 / 2.0);
        s = s.step(&Action::hold(GripperState::Close), &cfg);
        assert!(s.grasped && s.held.is_some());
        let b = s.bodies[1];
        let lift = b.z1 + a.height() / 2.0 + 0.012;
        while (s.tip.z - lift).abs() > 1e-9 {
            let z = (s.tip.z + 0.008).min(lift);
            s = mv(&s, Vector3::new(s.tip.x, s.tip.y, z), GripperState::Close);
        }
        for _ in 0..40 {
            let d = Vector3::new(b.center[0] - s.tip.x, b.center[1] - s.tip.y, 0.0);
            let step = if d.norm() > 0.008 { d.normalize() * 0.008 } else { d };
            s = mv(&s, s.tip + step, GripperState::Close);
        }
        // The block cannot pass through the one below.
        s = mv(&s, Vector3::new(s.tip.x, s.tip.y, 0.0), GripperState::Close);
        assert!((s.bodies[0].z0 - b.z1).abs() < 1e-9);
        s = s.step(&Action::hold(GripperState::Open), &cfg);
        assert!(s.held.is_none());
        assert!(s.stacked && s.success());
        assert_eq!(overlap_error(&s.bodies[0], &s.bodies[1]), 0.0);
    }

    #[test]
    fn release_off_target_falls_to_table() {
        let (spec, mut s) = state(Task::Stack, 5);
        let a = s.bodies[0];
        s.tip = Vector3::new(a.center[0], a.center[1], a.z1 / 2.0);
        s = s.step(&Action::hold(GripperState::Close), &spec.config);
        s.tip.z = 0.1;
        s = s.step(&Action::hold(GripperState::Open), &spec.config);
        assert_eq!(s.bodies[0].z0, 0.0);
        assert!(!s.stacked && s.grasped);
    }

    #[test]
    fn overlap_error_examples() {
        let blk = |x: f64, side: f64| Body {
            center: [x, 0.0],
            z0: 0.0,
            z1: 0.03,
            shape: Shape::Block { half: side / 2.0, yaw: 0.0 },
            color: [0.0; 3],
        };
        assert_eq!(overlap_error(&blk(0.0, 0.02), &blk(0.0, 0.05)), 0.0);
        assert!((overlap_error(&blk(0.04, 0.04), &blk(0.0, 0.06)) - 0.75).abs() < 0.05);
        assert_eq!(overlap_error(&blk(1.0, 0.04), &blk(0.0, 0.06)), 1.0);
    }
}
