use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossComponents, LossGrad, LossWeights};
use super::net::{NetConfig, Policy, PolicyParams, Prediction};
use crate::augment::{center_crop, derive_seed, AugmentSpec, LabeledSample};
use crate::dataset::ActionLabel;
use crate::error::{Error, Result};
use crate::geometry::{quat_to_rotmat, rotmat_to_6d, Quaternion};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Shuffling seed.
    pub seed: u64,
    #[serde(default)]
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from `lr` to zero over the run.
    Cosine,
}

impl OptimConfig {
    /// Learning rate at step `t` of `total`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let x = t as f64 / total.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 32,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: OptimConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: OptimConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub net: NetConfig,
    #[serde(default)]
    pub loss: LossWeights,
    pub augment: AugmentSpec,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub init_seed: u64,
}

impl TrainConfig {
    pub fn new(net: NetConfig) -> Self {
        Self {
            net,
            loss: LossWeights::default(),
            augment: AugmentSpec::none(),
            optim: OptimConfig::default(),
            init_seed: 0,
        }
    }
}

/// Squared error per dimension on `(dx, w)`, with the two parts broken out.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BcMse {
    pub bc_mse: f64,
    pub dx: f64,
    pub w: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: LossComponents,
    #[serde(default)]
    pub bc_mse: Option<f64>,
    #[serde(default)]
    pub bc_mse_dx: Option<f64>,
    #[serde(default)]
    pub bc_mse_w: Option<f64>,
}

/// BC-MSE for any predictor of `(image) -> Prediction`.
pub fn eval_bc_mse_with<F>(samples: &[LabeledSample], mut predict: F) -> Result<BcMse>
where
    F: FnMut(usize, &LabeledSample) -> Result<Prediction>,
{
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split has no samples".into()));
    }
    let (mut dx, mut w) = (0.0, 0.0);
    for (i, s) in samples.iter().enumerate() {
        let p = predict(i, s)?;
        dx += (0..3).map(|k| (p.x_hat[k] - s.label.dx[k]).powi(2)).sum::<f64>();
        w += (0..6).map(|k| (p.w_hat[k] - s.label.w.0[k]).powi(2)).sum::<f64>();
    }
    let n = samples.len() as f64;
    Ok(BcMse {
        bc_mse: (dx + w) / (9.0 * n),
        dx: dx / (3.0 * n),
        w: w / (6.0 * n),
        samples: samples.len(),
    })
}

/// Bring an image to the network input size by center cropping.
pub fn fit_input(img: &ImageTensor, cfg: &NetConfig) -> Result<ImageTensor> {
    if img.height() == cfg.input_h && img.width() == cfg.input_w {
        return Ok(img.clone());
    }
    let s = LabeledSample {
        image: img.clone(),
        label: ActionLabel {
            dx: [0.0; 3],
            w: crate::geometry::Rot6D::identity(),
            g: Default::default(),
        },
    };
    Ok(center_crop(&s, cfg.input_h, cfg.input_w)?.image)
}

pub fn predict_all(policy: &Policy, samples: &[LabeledSample]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let imgs = chunk
            .iter()
            .map(|s| fit_input(&s.image, policy.config()))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ImageTensor> = imgs.iter().collect();
        out.extend(policy.forward_batch(&refs)?.0);
    }
    Ok(out)
}

pub fn eval_bc_mse(policy: &Policy, samples: &[LabeledSample]) -> Result<BcMse> {
    let preds = predict_all(policy, samples)?;
    eval_bc_mse_with(samples, |i, _| Ok(preds[i]))
}

/// A random unit translation and the 6D form of a uniformly random rotation.
pub fn random_prediction(rng: &mut impl Rng) -> Prediction {
    let mut v = [0.0f64; 3];
    loop {
        for x in &mut v {
            *x = rng.sample(StandardNormal);
        }
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            v = v.map(|x| x / n);
            break;
        }
    }
    let q = loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Ok(q) = q.normalized() {
            break q;
        }
    };
    Prediction {
        x_hat: v,
        w_hat: rotmat_to_6d(&quat_to_rotmat(&q).expect("unit quaternion")).0,
        g_logits: [0.0; 2],
    }
}

/// Monte-Carlo BC-MSE of [`random_prediction`], averaged over `trials` passes.
pub fn random_baseline_mse(samples: &[LabeledSample], seed: u64, trials: usize) -> Result<BcMse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = BcMse::default();
    for _ in 0..trials.max(1) {
        let m = eval_bc_mse_with(samples, |_, _| Ok(random_prediction(&mut rng)))?;
        acc.bc_mse += m.bc_mse;
        acc.dx += m.dx;
        acc.w += m.w;
        acc.samples = m.samples;
    }
    let t = trials.max(1) as f64;
    acc.bc_mse /= t;
    acc.dx /= t;
    acc.w /= t;
    Ok(acc)
}

/// Mean loss and gradient over one batch of already-sized images.
pub fn batch_loss_grad(
    policy: &Policy,
    images: &[&ImageTensor],
    labels: &[ActionLabel],
    weights: &LossWeights,
) -> Result<(LossComponents, Vec<f64>)> {
    let (preds, cache) = policy.forward_batch(images)?;
    let scale = 1.0 / images.len() as f64;
    let mut comps = LossComponents::default();
    let with_grip = policy.has_gripper();
    let grads: Vec<LossGrad> = preds
        .iter()
        .zip(labels)
        .map(|(p, t)| {
            let (c, mut g) = loss_and_grad(p, t, weights, with_grip);
            comps.accumulate(&c, scale);
            g.x_hat = g.x_hat.map(|v| v * scale);
            g.w_hat = g.w_hat.map(|v| v * scale);
            g.g_logits = g.g_logits.map(|v| v * scale);
            g
        })
        .collect();
    Ok((comps, policy.backward(&cache, &grads)))
}

/// Minibatch Adam. `on_epoch` sees every epoch's record and parameters.
pub fn train<F>(
    train_set: &[LabeledSample],
    heldout: &[LabeledSample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(PolicyParams, Vec<EpochRecord>)>
where
    F: FnMut(&EpochRecord, &PolicyParams) -> Result<()>,
{
    if train_set.is_empty() {
        return Err(Error::Empty("training split has no samples".into()));
    }
    cfg.loss.validate()?;
    if cfg.optim.batch_size == 0 || !(cfg.optim.lr > 0.0) {
        return Err(Error::InvalidArgument("batch_size and lr must be positive".into()));
    }
    let mut policy = Policy::new(cfg.net.clone(), cfg.init_seed)?;
    let mut adam = Adam::new(cfg.optim, policy.params.count());
    let (h, w) = (cfg.net.input_h, cfg.net.input_w);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.optim.epochs);
    let total_steps = cfg.optim.epochs * train_set.len().div_ceil(cfg.optim.batch_size);
    let mut step = 0;
    for epoch in 0..cfg.optim.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.optim.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let mut epoch_loss = LossComponents::default();
        for (bi, batch) in order.chunks(cfg.optim.batch_size).enumerate() {
            let samples = batch
                .iter()
                .map(|&i| cfg.augment.apply(&train_set[i], h, w, epoch as u64, i as u64))
                .collect::<Result<Vec<_>>>()?;
            let images: Vec<&ImageTensor> = samples.iter().map(|s| &s.image).collect();
            let labels: Vec<ActionLabel> = samples.iter().map(|s| s.label).collect();
            let (comps, grad) = batch_loss_grad(&policy, &images, &labels, &cfg.loss)?;
            if !comps.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}: {comps:?}"
                )));
            }
            epoch_loss.accumulate(&comps, batch.len() as f64 / train_set.len() as f64);
            adam.step(&mut policy.params.values, &grad, cfg.optim.lr_at(step, total_steps));
            step += 1;
        }
        if !policy.params.is_finite() {
            return Err(Error::Diverged(format!("non-finite parameters after epoch {epoch}")));
        }
        let eval = if heldout.is_empty() {
            None
        } else {
            Some(eval_bc_mse(&policy, heldout)?)
        };
        let rec = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            bc_mse: eval.map(|e| e.bc_mse),
            bc_mse_dx: eval.map(|e| e.dx),
            bc_mse_w: eval.map(|e| e.w),
        };
        on_epoch(&rec, &policy.params)?;
        log.push(rec);
    }
    Ok((policy.params, log))
}
