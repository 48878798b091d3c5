use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expert::Expert;
use super::render::render;
use super::world::{Action, WorldState};
use super::{SimConfig, TaskSpec};
use crate::dataset::Task;
use crate::error::Result;
use crate::geometry::{rot6d_to_rotmat, RotMat3, Rot6D};
use crate::gripper::GripperState;
use crate::image::ImageTensor;
use crate::policy::{fit_input, Policy};

pub trait Controller {
    fn reset(&mut self, _state: &WorldState) {}

    /// `None` ends the episode.
    fn act(&mut self, image: &ImageTensor, state: &WorldState, cfg: &SimConfig) -> Result<Option<Action>>;
}

/// The scripted demonstrator. It reads the world state, not the image.
pub struct ExpertController {
    seed: u64,
    expert: Option<Expert>,
}

impl ExpertController {
    pub fn new(seed: u64) -> Self {
        Self { seed, expert: None }
    }
}

impl Controller for ExpertController {
    fn reset(&mut self, state: &WorldState) {
        self.expert = Some(Expert::new(state, self.seed));
    }

    fn act(&mut self, _image: &ImageTensor, state: &WorldState, cfg: &SimConfig) -> Result<Option<Action>> {
        let e = self.expert.get_or_insert_with(|| Expert::new(state, self.seed));
        Ok(e.act(state, cfg))
    }
}

/// Runs a trained network on the rendered frame. Predicted translations
/// are in normalized units and are multiplied by `action_scale` meters.
pub struct PolicyController<'a> {
    pub policy: &'a Policy,
    pub action_scale: f64,
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, image: &ImageTensor, _state: &WorldState, _cfg: &SimConfig) -> Result<Option<Action>> {
        let input = fit_input(image, self.policy.config())?;
        let p = self.policy.predict(&input)?;
        let x = Vector3::from(p.x_hat) * self.action_scale;
        let rot = rot6d_to_rotmat(&Rot6D(p.w_hat)).unwrap_or_else(|_| RotMat3::identity());
        let g = if self.policy.has_gripper() {
            p.gripper()
        } else {
            GripperState::Open
        };
        Ok(Some(Action { dx: x, rot, g }))
    }
}

/// Uniformly random unit-step translations, small random rotations and
/// random gripper commands.
pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomController {
    fn act(&mut self, _image: &ImageTensor, _state: &WorldState, cfg: &SimConfig) -> Result<Option<Action>> {
        let r = &mut self.rng;
        let dir = loop {
            let v = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            if v.norm() > 1e-3 && v.norm() <= 1.0 {
                break v.normalize();
            }
        };
        let yaw = r.gen_range(-5f64..5.0).to_radians();
        let g = if r.gen_bool(0.1) { GripperState::Close } else { GripperState::Open };
        Ok(Some(Action {
            dx: dir * cfg.step_size,
            rot: RotMat3::rot_z(yaw),
            g,
        }))
    }
}

/// Moves the target (push goal or base block) once during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub step: usize,
    pub max_offset: f64,
    pub seed: u64,
}

impl Disturbance {
    fn apply(&self, s: &mut WorldState) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let th: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let r = rng.gen_range(0.5..1.0) * self.max_offset;
        let d = [r * th.cos(), r * th.sin()];
        match s.task {
            Task::Push => {
                if let Some(g) = s.goal.as_mut() {
                    g[0] += d[0];
                    g[1] += d[1];
                }
            }
            Task::Stack => {
                if !s.stacked {
                    let b = &mut s.bodies[1];
                    b.center[0] += d[0];
                    b.center[1] += d[1];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub max_steps: usize,
    pub disturbance: Option<Disturbance>,
    pub record: bool,
}

impl RolloutOptions {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            max_steps: cfg.max_steps,
            disturbance: None,
            record: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoals {
    /// Push: the disc was touched. Stack: the small block was grasped.
    pub reached_object: bool,
    /// Push: the disc entered the goal. Stack: the block was placed.
    pub reached_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub tip: [f64; 3],
    pub yaw: f64,
    pub g: GripperState,
    pub objects: Vec<[f64; 3]>,
}

impl StepRecord {
    fn of(s: &WorldState) -> Self {
        Self {
            t: s.t,
            tip: [s.tip.x, s.tip.y, s.tip.z],
            yaw: s.yaw,
            g: s.gripper,
            objects: s.bodies.iter().map(|b| [b.center[0], b.center[1], b.z0]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub task: Task,
    pub scene_id: String,
    pub seed: u64,
    pub success: bool,
    pub sub_goals: SubGoals,
    pub steps: usize,
    pub disturbed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<StepRecord>,
}

/// Run one closed-loop episode from the layout drawn from `seed`.
pub fn rollout(spec: &TaskSpec, seed: u64, ctrl: &mut dyn Controller, opts: &RolloutOptions) -> Result<RolloutResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = WorldState::initial(spec, &mut rng);
    ctrl.reset(&s);
    let mut traj = Vec::new();
    let mut disturbed = false;
    if opts.record {
        traj.push(StepRecord::of(&s));
    }
    while s.t < opts.max_steps && !s.success() {
        if let Some(d) = opts.disturbance.filter(|d| d.step == s.t) {
            d.apply(&mut s);
            disturbed = true;
        }
        let img = render(spec, &s, spec.config.render_px);
        let Some(a) = ctrl.act(&img, &s, &spec.config)? else { break };
        s = s.step(&a, &spec.config);
        if opts.record {
            traj.push(StepRecord::of(&s));
        }
    }
    let success = s.success();
    let sub_goals = match s.task {
        Task::Push => SubGoals {
            reached_object: s.contacted,
            reached_goal: success,
        },
        Task::Stack => SubGoals {
            reached_object: s.grasped,
            reached_goal: s.stacked,
        },
    };
    Ok(RolloutResult {
        task: s.task,
        scene_id: spec.scene_id(),
        seed,
        success,
        sub_goals,
        steps: s.t,
        disturbed,
        trajectory: traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expert_rate(task: Task, n: u64) -> (usize, Vec<u64>) {
        let mut ok = 0;
        let mut failed = Vec::new();
        for seed in 0..n {
            let spec = TaskSpec::new(task, seed % 5, SimConfig::default());
            let r = rollout(&spec, seed, &mut ExpertController::new(seed), &RolloutOptions::new(&spec.config)).unwrap();
            assert!(!r.sub_goals.reached_goal || r.sub_goals.reached_object);
            if r.success {
                ok += 1;
            } else {
                failed.push(seed);
            }
        }
        (ok, failed)
    }

    #[test]
    fn expert_solves_push() {
        let (ok, failed) = expert_rate(Task::Push, 100);
        assert_eq!(ok, 100, "failed seeds {failed:?}");
    }

    #[test]
    fn expert_solves_stack() {
        let (ok, failed) = expert_rate(Task::Stack, 100);
        assert_eq!(ok, 100, "failed seeds {failed:?}");
    }

    #[test]
    fn random_controller_rarely_succeeds() {
        for task in [Task::Push, Task::Stack] {
            let mut ok = 0;
            for seed in 0..100 {
                let spec = TaskSpec::new(task, seed % 5, SimConfig::default());
                let r = rollout(&spec, seed, &mut RandomController::new(seed), &RolloutOptions::new(&spec.config)).unwrap();
                assert!(!r.sub_goals.reached_goal || r.sub_goals.reached_object);
                ok += r.success as usize;
            }
            assert!(ok < 5, "{task}: {ok}");
        }
    }

    #[test]
    fn rollouts_are_deterministic() {
        let spec = TaskSpec::new(Task::Push, 1, SimConfig::default());
        let mut opts = RolloutOptions::new(&spec.config);
        opts.record = true;
        opts.disturbance = Some(Disturbance { step: 5, max_offset: 0.03, seed: 9 });
        let a = rollout(&spec, 3, &mut ExpertController::new(3), &opts).unwrap();
        let b = rollout(&spec, 3, &mut ExpertController::new(3), &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.disturbed && a.success);
    }
}
