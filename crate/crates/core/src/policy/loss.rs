use serde::{Deserialize, Serialize};

use super::net::Prediction;
use crate::dataset::ActionLabel;
use crate::error::{Error, Result};
use crate::gripper::GripperState;

/// Cosines beyond `±(1 - COS_CLAMP)` are treated as saturated.
pub const COS_CLAMP: f64 = 1e-6;
/// The direction term is skipped below this vector norm.
pub const DIR_MIN_NORM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub l2: f64,
    pub dir: f64,
    pub rot: f64,
    pub grip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            dir: 0.1,
            rot: 1.0,
            grip: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.l1, self.l2, self.dir, self.rot, self.grip];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative and not all zero: {w:?}"
            )));
        }
        Ok(())
    }

    pub fn direction_only() -> Self {
        Self {
            l1: 0.0,
            l2: 0.0,
            dir: 1.0,
            rot: 0.0,
            grip: 0.0,
        }
    }
}

/// Unweighted terms plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub l1: f64,
    pub l2: f64,
    pub dir: f64,
    pub rot: f64,
    pub grip: f64,
    pub total: f64,
}

impl LossComponents {
    pub(crate) fn accumulate(&mut self, o: &LossComponents, scale: f64) {
        self.l1 += o.l1 * scale;
        self.l2 += o.l2 * scale;
        self.dir += o.dir * scale;
        self.rot += o.rot * scale;
        self.grip += o.grip * scale;
        self.total += o.total * scale;
    }
}

/// Gradient of the loss with respect to the raw outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossGrad {
    pub x_hat: [f64; 3],
    pub w_hat: [f64; 6],
    pub g_logits: [f64; 2],
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Angle between predicted and target translation, or 0 if either is
/// shorter than [`DIR_MIN_NORM`].
pub fn direction_loss(pred: &[f64; 3], target: &[f64; 3]) -> f64 {
    if norm(pred) < DIR_MIN_NORM || norm(target) < DIR_MIN_NORM {
        return 0.0;
    }
    // atan2 keeps full precision near 0 and π where arccos loses it.
    norm(&cross(pred, target)).atan2(dot(pred, target))
}

/// Gradient of [`direction_loss`] with respect to `pred`; zero where the
/// cosine is saturated or the term is skipped.
pub fn direction_loss_grad(pred: &[f64; 3], target: &[f64; 3]) -> [f64; 3] {
    let (np, nt) = (norm(pred), norm(target));
    if np < DIR_MIN_NORM || nt < DIR_MIN_NORM {
        return [0.0; 3];
    }
    let c = dot(pred, target) / (np * nt);
    if c.abs() >= 1.0 - COS_CLAMP {
        return [0.0; 3];
    }
    // d/dp arccos(c) = -(t/(|p||t|) - c p/|p|²) / sqrt(1 - c²)
    let k = -1.0 / (1.0 - c * c).sqrt();
    let mut g = [0.0; 3];
    for i in 0..3 {
        g[i] = k * (target[i] / (np * nt) - c * pred[i] / (np * np));
    }
    g
}

fn log_softmax2(l: &[f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    [l[0] - lse, l[1] - lse]
}

/// Loss terms and their gradient for one sample. `with_gripper` turns the
/// cross-entropy on.
pub fn loss_and_grad(pred: &Prediction, target: &ActionLabel, w: &LossWeights, with_gripper: bool) -> (LossComponents, LossGrad) {
    let mut c = LossComponents::default();
    let mut g = LossGrad::default();
    for i in 0..3 {
        let e = pred.x_hat[i] - target.dx[i];
        c.l1 += e.abs() / 3.0;
        c.l2 += e * e / 3.0;
        let sign = if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        };
        g.x_hat[i] += w.l1 * sign / 3.0 + w.l2 * 2.0 * e / 3.0;
    }
    c.dir = direction_loss(&pred.x_hat, &target.dx);
    if w.dir != 0.0 {
        let d = direction_loss_grad(&pred.x_hat, &target.dx);
        for i in 0..3 {
            g.x_hat[i] += w.dir * d[i];
        }
    }
    for j in 0..6 {
        let e = pred.w_hat[j] - target.w.0[j];
        c.rot += e * e / 6.0;
        g.w_hat[j] = w.rot * 2.0 * e / 6.0;
    }
    if with_gripper {
        let ls = log_softmax2(&pred.g_logits);
        let k = match target.g {
            GripperState::Open => 0,
            GripperState::Close => 1,
        };
        c.grip = -ls[k];
        for j in 0..2 {
            let p = ls[j].exp();
            g.g_logits[j] = w.grip * (p - (j == k) as u8 as f64);
        }
    }
    c.total = w.l1 * c.l1 + w.l2 * c.l2 + w.dir * c.dir + w.rot * c.rot + if with_gripper { w.grip * c.grip } else { 0.0 };
    (c, g)
}

/// Weighted total and the unweighted terms, including the gripper term.
pub fn loss(pred: &Prediction, target: &ActionLabel, w: &LossWeights) -> (f64, LossComponents) {
    let (c, _) = loss_and_grad(pred, target, w, true);
    (c.total, c)
}
