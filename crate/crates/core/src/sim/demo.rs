use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::expert::Expert;
use super::render::{finger_keypoints, render};
use super::world::WorldState;
use super::TaskSpec;
use crate::dataset::{assemble, write_json, DemoMeta, Demonstration, Task};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Quaternion, RotMat3};
use crate::gripper::{write_jsonl, FingerDetection, GripperState};
use crate::image::ImageTensor;
use crate::sfm::{
    empty_points_text, world_to_camera, write_cameras_text, write_images_text, FramePose, FramePoseSeq,
    SfmCameraRecord, SfmImageRecord,
};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// Deliberate defects for exercising quality control.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corruption {
    /// Fraction of interior frames whose pose records are dropped.
    pub drop_fraction: f64,
    /// Frame whose recorded pose jumps away by `outlier_factor` mean steps.
    pub outlier_frame: Option<usize>,
    pub outlier_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoOptions {
    /// Global scale of the emitted poses; drawn log-uniformly from
    /// [0.1, 10] when unset.
    pub scale: Option<f64>,
    /// Per-frame pose noise: rotation in degrees and translation in meters.
    pub pose_noise_deg: f64,
    pub pose_noise_m: f64,
    /// Fingertip detection noise, native pixels.
    pub detection_noise_px: f64,
    /// Probability that a detection is replaced by a low-confidence miss.
    pub detection_dropout: f64,
    pub corruption: Corruption,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            scale: None,
            pose_noise_deg: 0.0,
            pose_noise_m: 0.0,
            detection_noise_px: 0.0,
            detection_dropout: 0.0,
            corruption: Corruption::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub schema_version: u32,
    pub trajectory_id: String,
    pub scene_id: String,
    pub task: Task,
    pub object_tags: Vec<String>,
    pub seed: u64,
    pub scene_seed: u64,
    pub scale: f64,
    pub expected_frames: usize,
    pub render_px: usize,
    pub options: DemoOptions,
    /// Seeds tried before this one whose expert episode failed.
    #[serde(default)]
    pub failed_seeds: Vec<u64>,
}

impl BundleMeta {
    pub fn demo_meta(&self) -> DemoMeta {
        DemoMeta {
            trajectory_id: self.trajectory_id.clone(),
            scene_id: self.scene_id.clone(),
            object_tags: self.object_tags.clone(),
            task: self.task,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoBundle {
    pub meta: BundleMeta,
    pub frames: Vec<ImageTensor>,
    /// Unscaled camera-to-world poses in the simulator frame.
    pub true_poses: Vec<Pose>,
    pub states: Vec<GripperState>,
    pub cameras: Vec<SfmCameraRecord>,
    pub images: Vec<SfmImageRecord>,
    pub detections: Vec<FingerDetection>,
    pub ground_truth: Demonstration,
}

pub fn frame_name(i: usize) -> String {
    format!("{i:04}.ppm")
}

fn gauss(rng: &mut impl Rng, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).unwrap().sample(rng)
    } else {
        0.0
    }
}

/// Run the expert on the layout drawn from `seed` and record the bundle.
pub fn generate_demo(spec: &TaskSpec, seed: u64, opts: &DemoOptions) -> Result<DemoBundle> {
    let cfg = &spec.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = WorldState::initial(spec, &mut rng);
    let mut expert = Expert::new(&s, seed);
    let mut states = vec![s.clone()];
    while s.t < cfg.max_steps && !s.success() {
        let Some(a) = expert.act(&s, cfg) else { break };
        s = s.step(&a, cfg);
        states.push(s.clone());
    }
    if !s.success() {
        return Err(Error::DegenerateTrajectory(format!(
            "expert did not finish {} seed {seed} within {} steps",
            spec.kind, cfg.max_steps
        )));
    }

    let mut noise = ChaCha8Rng::seed_from_u64(seed ^ 0xb0d1_e000_0000_0001);
    let scale = opts.scale.unwrap_or_else(|| 10f64.powf(noise.gen_range(-1.0..1.0)));
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    // The reconstruction frame is an arbitrary rigid motion of the world.
    let frame_yaw = noise.gen_range(-3.0..3.0);
    let frame_shift = Vector3::new(noise.gen_range(-1.0..1.0), noise.gen_range(-1.0..1.0), noise.gen_range(-0.2..0.2));
    let world = Pose::new(RotMat3::rot_z(frame_yaw), frame_shift);

    let frames: Vec<ImageTensor> = states.iter().map(|st| render(spec, st, cfg.render_px)).collect();
    let true_poses: Vec<Pose> = states.iter().map(|st| st.camera_pose(&cfg.camera)).collect();
    let grips: Vec<GripperState> = states.iter().map(|st| st.gripper).collect();
    let names: Vec<String> = (0..states.len()).map(frame_name).collect();

    let trajectory_id = format!("{}-{seed:06}", spec.scene_id());
    let meta = BundleMeta {
        schema_version: BUNDLE_SCHEMA_VERSION,
        trajectory_id: trajectory_id.clone(),
        scene_id: spec.scene_id(),
        task: spec.kind,
        object_tags: spec.object_tags(),
        seed,
        scene_seed: spec.scene_seed,
        scale,
        expected_frames: states.len(),
        render_px: cfg.render_px,
        options: *opts,
        failed_seeds: Vec::new(),
    };
    let seq = FramePoseSeq {
        trajectory_id: trajectory_id.clone(),
        frames: true_poses
            .iter()
            .zip(&names)
            .enumerate()
            .map(|(i, (p, n))| FramePose {
                frame_index: i,
                pose: *p,
                name: n.clone(),
            })
            .collect(),
        expected_frames: Some(states.len()),
    };
    let frame_paths: Vec<String> = names.iter().map(|n| format!("frames/{n}")).collect();
    let ground_truth = assemble(&seq, &grips, &frame_paths, meta.demo_meta())?;

    let mean_step = true_poses
        .windows(2)
        .map(|w| (w[1].translation - w[0].translation).norm())
        .sum::<f64>()
        / (true_poses.len() - 1) as f64;
    let mut images = Vec::with_capacity(true_poses.len());
    for (i, p) in true_poses.iter().enumerate() {
        let mut p = world.compose(p);
        if opts.pose_noise_deg > 0.0 || opts.pose_noise_m > 0.0 {
            let axis = Vector3::new(gauss(&mut noise, 1.0), gauss(&mut noise, 1.0), gauss(&mut noise, 1.0));
            let ang = gauss(&mut noise, opts.pose_noise_deg).to_radians();
            if let Ok(r) = RotMat3::from_axis_angle(axis, ang) {
                p.rotation = p.rotation.mul(&r);
            }
            p.translation += Vector3::new(
                gauss(&mut noise, opts.pose_noise_m),
                gauss(&mut noise, opts.pose_noise_m),
                gauss(&mut noise, opts.pose_noise_m),
            );
        }
        if opts.corruption.outlier_frame == Some(i) {
            p.translation += Vector3::new(1.0, 0.0, 0.0) * opts.corruption.outlier_factor * mean_step;
        }
        p.translation *= scale;
        let (q, t): (Quaternion, Vector3<f64>) = world_to_camera(&p);
        images.push(SfmImageRecord {
            image_id: i as u32 + 1,
            q,
            t,
            camera_id: 1,
            name: names[i].clone(),
        });
    }
    let n_drop = (opts.corruption.drop_fraction * images.len() as f64).round() as usize;
    if n_drop > 0 && images.len() > 2 {
        let mut interior: Vec<usize> = (1..images.len() - 1).collect();
        rand::seq::SliceRandom::shuffle(interior.as_mut_slice(), &mut noise);
        let gone: std::collections::HashSet<usize> = interior.into_iter().take(n_drop).collect();
        images = images.into_iter().enumerate().filter(|(i, _)| !gone.contains(i)).map(|(_, r)| r).collect();
    }

    let cam = &cfg.camera;
    let native = cam.native_px as f64;
    let detections = states
        .iter()
        .enumerate()
        .map(|(i, st)| {
            if opts.detection_dropout > 0.0 && noise.gen_bool(opts.detection_dropout.min(1.0)) {
                let mut r = || [noise.gen_range(0.0..native), noise.gen_range(0.0..native)];
                let (l, rt) = (r(), r());
                return FingerDetection {
                    frame_index: i,
                    left_tip: l,
                    right_tip: rt,
                    confidence: noise.gen_range(0.05..0.45),
                };
            }
            let kp = finger_keypoints(cam, st.gap);
            let mut jit = |p: [f64; 2]| {
                let sd = opts.detection_noise_px;
                [p[0] + gauss(&mut noise, sd), p[1] + gauss(&mut noise, sd)]
            };
            let (l, r) = (jit(kp[0]), jit(kp[1]));
            FingerDetection {
                frame_index: i,
                left_tip: l,
                right_tip: r,
                confidence: noise.gen_range(0.7..1.0),
            }
        })
        .collect();

    let f = cam.focal();
    let c = cam.principal();
    let cameras = vec![SfmCameraRecord {
        camera_id: 1,
        model_name: "PINHOLE".into(),
        width: cam.native_px as u32,
        height: cam.native_px as u32,
        params: vec![f, f, c, c],
    }];
    Ok(DemoBundle {
        meta,
        frames,
        true_poses,
        states: grips,
        cameras,
        images,
        detections,
        ground_truth,
    })
}

/// Like [`generate_demo`], moving on to the next seed when the expert fails.
pub fn generate_demo_retrying(spec: &TaskSpec, seed: u64, opts: &DemoOptions, max_tries: usize) -> Result<DemoBundle> {
    let mut failed = Vec::new();
    let mut last = None;
    for k in 0..max_tries.max(1) as u64 {
        match generate_demo(spec, seed + k, opts) {
            Ok(mut b) => {
                b.meta.failed_seeds = failed;
                return Ok(b);
            }
            Err(e @ Error::DegenerateTrajectory(_)) => {
                failed.push(seed + k);
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Write `frames/`, `sfm/`, `detections.jsonl`, `gt_labels.json` and `meta.json`.
pub fn write_bundle(dir: &Path, b: &DemoBundle) -> Result<()> {
    let frames = dir.join("frames");
    let sfm = dir.join("sfm");
    for d in [&frames, &sfm] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (i, f) in b.frames.iter().enumerate() {
        f.write_ppm(&frames.join(frame_name(i)))?;
    }
    let write = |p: &Path, s: &str| std::fs::write(p, s).map_err(|e| Error::io(p, e));
    write(&sfm.join("cameras.txt"), &write_cameras_text(&b.cameras))?;
    write(&sfm.join("images.txt"), &write_images_text(&b.images))?;
    write(&sfm.join("points3D.txt"), empty_points_text())?;
    write(&dir.join("detections.jsonl"), &write_jsonl(&b.detections))?;
    write_json(&dir.join("gt_labels.json"), &b.ground_truth)?;
    write_json(&dir.join("meta.json"), &b.meta)
}

pub fn read_bundle_meta(dir: &Path) -> Result<BundleMeta> {
    let p = dir.join("meta.json");
    let s = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimConfig;

    #[test]
    fn bundle_is_consistent() {
        let spec = TaskSpec::new(Task::Stack, 2, SimConfig::default());
        let b = generate_demo(&spec, 11, &DemoOptions::default()).unwrap();
        let n = b.frames.len();
        assert_eq!(b.images.len(), n);
        assert_eq!(b.detections.len(), n);
        assert_eq!(b.ground_truth.samples.len(), n - 1);
        assert!(b.states.contains(&GripperState::Close));
        assert!(b.meta.scale >= 0.1 && b.meta.scale <= 10.0);
    }

    #[test]
    fn dropped_frames_are_missing() {
        let spec = TaskSpec::new(Task::Push, 2, SimConfig::default());
        let opts = DemoOptions {
            corruption: Corruption {
                drop_fraction: 0.3,
                ..Default::default()
            },
            ..Default::default()
        };
        let b = generate_demo(&spec, 5, &opts).unwrap();
        assert!(b.images.len() < b.frames.len());
        assert_eq!(b.images.first().unwrap().name, frame_name(0));
    }
}
