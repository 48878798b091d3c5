//! Central finite-difference verification of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::net::{GripperHead, NetConfig, Policy};
use super::train::batch_loss_grad;
use crate::dataset::ActionLabel;
use crate::error::Result;
use crate::geometry::Rot6D;
use crate::gripper::GripperState;
use crate::image::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub net: NetConfig,
    pub eps: f64,
    pub batch: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::small(),
            eps: 1e-4,
            batch: 2,
            seed: 0,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub params: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    /// Coordinates re-run with a smaller step because a ReLU changed sign.
    pub reduced_step: usize,
    /// Coordinates where every step still crossed a kink.
    pub skipped: usize,
    pub tensors: Vec<TensorCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub variants: Vec<VariantReport>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn check_variant(name: &str, net: NetConfig, weights: LossWeights, cfg: &GradCheckConfig) -> Result<VariantReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = Policy::new(net.clone(), rng.gen())?;
    // Nonzero biases keep pre-activations away from exact zeros.
    for t in policy.params.tensors.clone() {
        if t.name.ends_with("bias") {
            for v in &mut policy.params.values[t.range()] {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let images: Vec<ImageTensor> = (0..cfg.batch)
        .map(|_| {
            let n = 3 * net.input_h * net.input_w;
            ImageTensor::from_planar(net.input_h, net.input_w, (0..n).map(|_| rng.gen()).collect())
        })
        .collect::<Result<_>>()?;
    let labels: Vec<ActionLabel> = (0..cfg.batch)
        .map(|_| ActionLabel {
            dx: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            w: Rot6D([0; 6].map(|_| rng.gen_range(-1.0..1.0))),
            g: if rng.gen() { GripperState::Close } else { GripperState::Open },
        })
        .collect();
    let refs: Vec<&ImageTensor> = images.iter().collect();
    let (_, analytic) = batch_loss_grad(&policy, &refs, &labels, &weights)?;
    let base_pattern = policy.forward_batch(&refs)?.1.activation_pattern();

    let eval = |p: &mut Policy, i: usize, delta: f64| -> Result<(f64, bool)> {
        let orig = p.params.values[i];
        p.params.values[i] = orig + delta;
        let (comps, _) = batch_loss_grad(p, &refs, &labels, &weights)?;
        let same = p.forward_batch(&refs)?.1.activation_pattern() == base_pattern;
        p.params.values[i] = orig;
        Ok((comps.total, same))
    };

    let mut report = VariantReport {
        variant: name.into(),
        params: policy.params.count(),
        max_rel_error: 0.0,
        worst_param: String::new(),
        reduced_step: 0,
        skipped: 0,
        tensors: Vec::new(),
    };
    for t in policy.params.tensors.clone() {
        let mut worst = 0.0f64;
        for (k, i) in t.range().enumerate() {
            let mut eps = cfg.eps;
            let mut numeric = None;
            for attempt in 0..4 {
                let (fp, sp) = eval(&mut policy, i, eps)?;
                let (fm, sm) = eval(&mut policy, i, -eps)?;
                if sp && sm {
                    numeric = Some((fp - fm) / (2.0 * eps));
                    if attempt > 0 {
                        report.reduced_step += 1;
                    }
                    break;
                }
                eps /= 10.0;
            }
            let Some(n) = numeric else {
                report.skipped += 1;
                continue;
            };
            let e = relative_error(analytic[i], n);
            worst = worst.max(e);
            if e > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = e;
                report.worst_param = format!("{}[{k}]", t.name);
            }
        }
        report.tensors.push(TensorCheck {
            name: t.name.clone(),
            len: t.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Check the joint network under the default and direction-only losses,
/// and the two-network layout under the default loss.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.net.validate()?;
    let joint = NetConfig {
        gripper: GripperHead::Joint,
        ..cfg.net.clone()
    };
    let separate = NetConfig {
        gripper: GripperHead::Separate,
        ..cfg.net.clone()
    };
    let variants = vec![
        check_variant("joint/default-loss", joint.clone(), LossWeights::default(), cfg)?,
        check_variant("joint/direction-only", joint, LossWeights::direction_only(), cfg)?,
        check_variant("separate/default-loss", separate, LossWeights::default(), cfg)?,
    ];
    let max = variants.iter().map(|v| v.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        eps: cfg.eps,
        tolerance: cfg.tolerance,
        max_rel_error: max,
        passed: max < cfg.tolerance && variants.iter().all(|v| v.skipped == 0),
        variants,
    })
}
