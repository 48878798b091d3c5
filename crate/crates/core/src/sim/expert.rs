use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::{Action, Shape, WorldState};
use super::SimConfig;
use crate::dataset::Task;
use crate::gripper::GripperState;

/// Clearance kept between the pusher and the disc while approaching.
const APPROACH_CLEARANCE: f64 = 0.004;
const PRE_PUSH_GAP: f64 = 0.012;
const PUSH_DEPTH: f64 = 0.003;
const REAPPROACH_DEG: f64 = 30.0;
const MAX_TURN_DEG: f64 = 2.0;
const REACHED: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpertPhase {
    Approach,
    Push,
    ToA,
    DescendA,
    Grasp,
    Lift,
    ToB,
    DescendB,
    Release,
    Retreat,
    Done,
}

/// Scripted demonstrator with its own noise stream.
#[derive(Debug, Clone)]
pub struct Expert {
    pub phase: ExpertPhase,
    nominal_yaw: f64,
    wobble: f64,
    wait: usize,
    rng: ChaCha8Rng,
}

fn wrap(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

fn toward(from: &Vector3<f64>, to: &Vector3<f64>, v: f64) -> Vector3<f64> {
    let d = to - from;
    if d.norm() <= v {
        *to
    } else {
        from + d * (v / d.norm())
    }
}

impl Expert {
    pub fn new(state: &WorldState, seed: u64) -> Self {
        Self {
            phase: match state.task {
                Task::Push => ExpertPhase::Approach,
                Task::Stack => ExpertPhase::ToA,
            },
            nominal_yaw: state.yaw,
            wobble: 0.0,
            wait: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xe8be_7000),
        }
    }

    fn gauss(&mut self, sd: f64) -> f64 {
        if sd > 0.0 {
            Normal::new(0.0, sd).unwrap().sample(&mut self.rng)
        } else {
            0.0
        }
    }

    /// Nominal heading drifts toward `target` with a bounded turn rate,
    /// plus a mean-reverting wobble.
    fn next_yaw(&mut self, target: Option<f64>, cfg: &SimConfig) -> f64 {
        if let Some(t) = target {
            let max = MAX_TURN_DEG.to_radians();
            self.nominal_yaw = wrap(self.nominal_yaw + (0.25 * wrap(t - self.nominal_yaw)).clamp(-max, max));
        }
        let sd = cfg.yaw_wobble_deg.to_radians() * (1.0f64 - 0.49).sqrt();
        self.wobble = 0.7 * self.wobble + self.gauss(sd);
        wrap(self.nominal_yaw + self.wobble)
    }

    fn with_noise(&mut self, from: &Vector3<f64>, to: Vector3<f64>, cfg: &SimConfig) -> Vector3<f64> {
        let d = to - from;
        let n = d.xy().norm();
        if n < 1e-9 {
            return to;
        }
        let lat = Vector3::new(-d.y / n, d.x / n, 0.0);
        to + lat * self.gauss(cfg.expert_noise * cfg.step_size)
    }

    /// Next action, or `None` once the task is finished.
    pub fn act(&mut self, s: &WorldState, cfg: &SimConfig) -> Option<Action> {
        match s.task {
            Task::Push => self.act_push(s, cfg),
            Task::Stack => self.act_stack(s, cfg),
        }
    }

    fn act_push(&mut self, s: &WorldState, cfg: &SimConfig) -> Option<Action> {
        let body = s.bodies[0];
        let Shape::Disc { radius } = body.shape else { return None };
        let goal = s.goal?;
        let o = Vector3::new(body.center[0], body.center[1], cfg.push_height);
        let d = Vector3::new(goal[0], goal[1], cfg.push_height) - o;
        if s.contacted && d.norm() <= 0.3 * s.goal_radius {
            self.phase = ExpertPhase::Done;
            return None;
        }
        let dh = d / d.norm();
        let contact = radius + cfg.pusher_radius;
        let v = cfg.step_size;
        let rel = o - s.tip;
        if self.phase == ExpertPhase::Push {
            let lateral = rel.xy().angle(&dh.xy()).to_degrees();
            if lateral > REAPPROACH_DEG || rel.norm() > contact + 0.03 {
                self.phase = ExpertPhase::Approach;
            }
        }
        let pre = o - dh * (contact + PRE_PUSH_GAP);
        if self.phase == ExpertPhase::Approach && (s.tip - pre).xy().norm() < REACHED {
            self.phase = ExpertPhase::Push;
        }
        let target = match self.phase {
            ExpertPhase::Approach => {
                let mut next = toward(&s.tip, &pre, v);
                // Walk around the disc rather than through it.
                let r = next - o;
                let keep = contact + APPROACH_CLEARANCE;
                if r.xy().norm() < keep {
                    let r2 = if r.xy().norm() > 1e-9 { r } else { -dh };
                    next = o + Vector3::new(r2.x, r2.y, 0.0).normalize() * keep;
                }
                next.z = cfg.push_height;
                next
            }
            _ => {
                let push_to = o - dh * (contact - PUSH_DEPTH) + dh * v.min(d.norm());
                toward(&s.tip, &push_to, v)
            }
        };
        let target = self.with_noise(&s.tip, target, cfg);
        let yaw = self.next_yaw(Some(dh.y.atan2(dh.x)), cfg);
        Some(Action::between(&cfg.camera, s, &target, yaw, GripperState::Open))
    }

    fn act_stack(&mut self, s: &WorldState, cfg: &SimConfig) -> Option<Action> {
        let (a, b) = (s.bodies[0], s.bodies[1]);
        let v = cfg.step_size;
        let lift_z = b.z1 + a.height() / 2.0 + 0.012;
        let place_z = b.z1 + a.height() / 2.0 + 0.002;
        let over_a = Vector3::new(a.center[0], a.center[1], cfg.travel_height);
        let offset = s.held.map_or([0.0; 2], |(_, o)| o);
        let over_b = [b.center[0] - offset[0], b.center[1] - offset[1]];
        let at = |p: &Vector3<f64>| (s.tip - p).norm() < REACHED;
        let mut g = GripperState::Open;
        let target = loop {
            match self.phase {
                ExpertPhase::ToA => {
                    if at(&over_a) {
                        self.phase = ExpertPhase::DescendA;
                        continue;
                    }
                    break toward(&s.tip, &over_a, v);
                }
                ExpertPhase::DescendA => {
                    let p = Vector3::new(a.center[0], a.center[1], a.z0 + a.height() / 2.0);
                    if at(&p) {
                        self.phase = ExpertPhase::Grasp;
                        self.wait = 1;
                        g = GripperState::Close;
                        break s.tip;
                    }
                    break toward(&s.tip, &p, v);
                }
                ExpertPhase::Grasp => {
                    if s.held.is_none() {
                        self.phase = ExpertPhase::ToA;
                        continue;
                    }
                    g = GripperState::Close;
                    if self.wait > 0 {
                        self.wait -= 1;
                        break s.tip;
                    }
                    self.phase = ExpertPhase::Lift;
                    continue;
                }
                ExpertPhase::Lift => {
                    g = GripperState::Close;
                    let p = Vector3::new(s.tip.x, s.tip.y, lift_z);
                    if at(&p) {
                        self.phase = ExpertPhase::ToB;
                        continue;
                    }
                    break toward(&s.tip, &p, v);
                }
                ExpertPhase::ToB => {
                    g = GripperState::Close;
                    let p = Vector3::new(over_b[0], over_b[1], lift_z);
                    if at(&p) {
                        self.phase = ExpertPhase::DescendB;
                        continue;
                    }
                    break toward(&s.tip, &p, v);
                }
                ExpertPhase::DescendB => {
                    g = GripperState::Close;
                    let p = Vector3::new(over_b[0], over_b[1], place_z);
                    if at(&p) {
                        self.phase = ExpertPhase::Release;
                        g = GripperState::Open;
                        break s.tip;
                    }
                    break toward(&s.tip, &p, v);
                }
                ExpertPhase::Release => {
                    if s.stacked {
                        self.phase = ExpertPhase::Retreat;
                        self.wait = 2;
                        continue;
                    }
                    // Placement missed; pick the block up again.
                    self.phase = ExpertPhase::ToA;
                    continue;
                }
                ExpertPhase::Retreat => {
                    if self.wait == 0 {
                        self.phase = ExpertPhase::Done;
                        return None;
                    }
                    self.wait -= 1;
                    break s.tip + Vector3::new(0.0, 0.0, v);
                }
                _ => return None,
            }
        };
        let target = if target == s.tip { target } else { self.with_noise(&s.tip, target, cfg) };
        let heading = (self.phase == ExpertPhase::ToB || self.phase == ExpertPhase::ToA)
            .then(|| (target.y - s.tip.y).atan2(target.x - s.tip.x))
            .filter(|_| (target - s.tip).xy().norm() > 0.5 * v);
        let yaw = self.next_yaw(heading, cfg);
        Some(Action::between(&cfg.camera, s, &target, yaw, g))
    }
}
