//! A planar pushing and stacking world with an eye-in-hand camera.

mod demo;
mod expert;
mod render;
mod rollout;
mod world;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::geometry::{Pose, RotMat3};

pub use demo::{
    generate_demo, generate_demo_retrying, read_bundle_meta, write_bundle, BundleMeta, Corruption, DemoBundle,
    DemoOptions,
};
pub use expert::{Expert, ExpertPhase};
pub use render::{finger_keypoints, render, render_native_keypoints};
pub use rollout::{
    rollout, Controller, Disturbance, ExpertController, PolicyController, RandomController, RolloutOptions,
    RolloutResult, StepRecord, SubGoals,
};
pub use world::{Action, Body, Shape, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    /// Native sensor width and height in pixels; detections and the SfM
    /// camera use this resolution.
    pub native_px: usize,
    pub fov_deg: f64,
    /// Camera height above the tool tip.
    pub height: f64,
    /// Horizontal offset of the camera ahead of the tool tip.
    pub ahead: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            native_px: 240,
            fov_deg: 70.0,
            height: 0.15,
            ahead: 0.07,
        }
    }
}

impl CameraConfig {
    pub fn focal(&self) -> f64 {
        self.native_px as f64 / 2.0 / (self.fov_deg.to_radians() / 2.0).tan()
    }

    pub fn principal(&self) -> f64 {
        self.native_px as f64 / 2.0
    }

    /// Camera-to-world rotation for a downward camera whose image-up
    /// direction is the heading `yaw`.
    pub fn rotation(yaw: f64) -> RotMat3 {
        let (s, c) = yaw.sin_cos();
        RotMat3(Matrix3::new(s, -c, 0.0, -c, -s, 0.0, 0.0, 0.0, -1.0))
    }

    /// Heading recovered from a camera rotation (roll and pitch are discarded).
    pub fn yaw_of(r: &RotMat3) -> f64 {
        // The image-right axis is (sin ψ, -cos ψ, ·).
        r.0[(0, 0)].atan2(-r.0[(1, 0)])
    }

    pub fn heading(yaw: f64) -> Vector3<f64> {
        Vector3::new(yaw.cos(), yaw.sin(), 0.0)
    }

    pub fn pose(&self, tip: &Vector3<f64>, yaw: f64) -> Pose {
        let c = tip + Self::heading(yaw) * self.ahead + Vector3::new(0.0, 0.0, self.height);
        Pose::new(Self::rotation(yaw), c)
    }

    pub fn tip_from_pose(&self, cam: &Pose) -> (Vector3<f64>, f64) {
        let yaw = Self::yaw_of(&cam.rotation);
        let tip = cam.translation - Self::heading(yaw) * self.ahead - Vector3::new(0.0, 0.0, self.height);
        (tip, yaw)
    }

    /// Native-resolution pixel of a world point, if in front of the camera.
    pub fn project(&self, cam: &Pose, p: &Vector3<f64>) -> Option<[f64; 2]> {
        let q = cam.rotation.transpose().apply(&(p - cam.translation));
        (q.z > 1e-9).then(|| {
            let f = self.focal();
            [f * q.x / q.z + self.principal(), f * q.y / q.z + self.principal()]
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub camera: CameraConfig,
    /// Side length of rendered frames.
    pub render_px: usize,
    pub supersample: usize,
    /// Expert speed per step, in meters.
    pub step_size: f64,
    /// Commanded translations are clipped to this length.
    pub max_step: f64,
    pub max_steps: usize,
    pub goal_radius_factor: f64,
    /// Allowed fraction of the stacked block's footprint that is unsupported.
    pub stack_tolerance: f64,
    pub open_gap: f64,
    pub closed_gap: f64,
    pub pusher_radius: f64,
    pub push_height: f64,
    pub travel_height: f64,
    /// Standard deviation of the mean-reverting heading wobble, degrees.
    pub yaw_wobble_deg: f64,
    /// Per-step lateral noise of the expert, as a fraction of the step size.
    pub expert_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            camera: CameraConfig::default(),
            render_px: 34,
            supersample: 2,
            step_size: 0.008,
            max_step: 0.012,
            max_steps: 150,
            goal_radius_factor: 1.5,
            stack_tolerance: 0.25,
            open_gap: 0.04,
            closed_gap: 0.003,
            pusher_radius: 0.012,
            push_height: 0.012,
            travel_height: 0.05,
            yaw_wobble_deg: 0.5,
            expert_noise: 0.1,
        }
    }
}

/// Appearance and object identity shared by every demo of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAppearance {
    pub table: [f32; 3],
    /// Amplitude, two spatial frequencies (rad/m) and two phases.
    pub texture: [f64; 5],
    pub object_colors: Vec<[f32; 3]>,
    /// Push: disc radius. Stack: small and large block sides.
    pub sizes: Vec<f64>,
    pub goal_color: [f32; 3],
    pub finger_color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: Task,
    pub scene_seed: u64,
    pub appearance: SceneAppearance,
    pub config: SimConfig,
}

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

fn hue_name(h: f64) -> &'static str {
    match h.rem_euclid(360.0) {
        h if h < 45.0 => "orange",
        h if h < 75.0 => "yellow",
        h if h < 160.0 => "green",
        h if h < 200.0 => "cyan",
        h if h < 260.0 => "blue",
        h if h < 300.0 => "purple",
        _ => "pink",
    }
}

impl TaskSpec {
    /// Draw a scene's appearance from its seed.
    pub fn new(kind: Task, scene_seed: u64, config: SimConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed ^ 0x5ce7_e5ee_d000_0000);
        let th = rng.gen_range(0.0..360.0);
        let table = hsv(th, rng.gen_range(0.05..0.3), rng.gen_range(0.35..0.7));
        let texture = [
            rng.gen_range(0.0..0.08),
            rng.gen_range(20.0..90.0),
            rng.gen_range(20.0..90.0),
            rng.gen_range(0.0..6.3),
            rng.gen_range(0.0..6.3),
        ];
        // Objects avoid red, which is reserved for the goal.
        let mut hues = Vec::new();
        let n = match kind {
            Task::Push => 1,
            Task::Stack => 2,
        };
        while hues.len() < n {
            let h: f64 = rng.gen_range(30.0..330.0);
            if hues.iter().all(|&o: &f64| (o - h).abs() > 50.0) {
                hues.push(h);
            }
        }
        let object_colors = hues
            .iter()
            .map(|&h| hsv(h, rng.gen_range(0.55..0.95), rng.gen_range(0.6..0.95)))
            .collect();
        let sizes = match kind {
            Task::Push => vec![rng.gen_range(0.02..0.03)],
            Task::Stack => vec![rng.gen_range(0.03..0.038), rng.gen_range(0.05..0.06)],
        };
        let goal_color = hsv(rng.gen_range(-8.0..8.0), rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0));
        Self {
            kind,
            scene_seed,
            appearance: SceneAppearance {
                table,
                texture,
                object_colors,
                sizes,
                goal_color,
                finger_color: [0.12, 0.12, 0.14],
            },
            config,
        }
    }

    pub fn object_tags(&self) -> Vec<String> {
        let shape = match self.kind {
            Task::Push => "disc",
            Task::Stack => "block",
        };
        self.appearance
            .object_colors
            .iter()
            .map(|c| {
                let (r, g, b) = (c[0] as f64, c[1] as f64, c[2] as f64);
                let max = r.max(g).max(b);
                let min = r.min(g).min(b);
                let d = (max - min).max(1e-9);
                let h = if max == r {
                    60.0 * ((g - b) / d)
                } else if max == g {
                    60.0 * ((b - r) / d + 2.0)
                } else {
                    60.0 * ((r - g) / d + 4.0)
                };
                format!("{shape}-{}", hue_name(h))
            })
            .collect()
    }

    pub fn scene_id(&self) -> String {
        format!("{}-scene-{:04}", self.kind, self.scene_seed)
    }
}
