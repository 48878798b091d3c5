use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    bd_to_cbp, cbp_to_bd, conv_backward, conv_forward, linear_backward, linear_forward, relu_backward_inplace,
    relu_inplace, ConvShape,
};
use super::loss::LossGrad;
use crate::error::{Error, Result};
use crate::geometry::{rot6d_to_rotmat, Rot6D, RotMat3};
use crate::gripper::GripperState;
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub const fn new(filters: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
            pad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GripperHead {
    Off,
    /// A second network with its own trunk.
    #[default]
    Separate,
    /// A third head on the shared trunk.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub conv: Vec<ConvSpec>,
    pub trans_fc: Vec<usize>,
    pub rot_fc: Vec<usize>,
    pub grip_fc: Vec<usize>,
    #[serde(default)]
    pub gripper: GripperHead,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetConfig {
    pub const PRESETS: [&'static str; 4] = ["desk", "fast", "small", "alexnet"];

    /// 64×64 input, four stride-2 convolutions.
    pub fn desk() -> Self {
        Self {
            input_h: 64,
            input_w: 64,
            conv: [16, 32, 64, 128].map(|f| ConvSpec::new(f, 3, 2, 1)).to_vec(),
            trans_fc: vec![512, 256],
            rot_fc: vec![256],
            grip_fc: vec![256],
            gripper: GripperHead::Separate,
        }
    }

    /// 32×32 input with narrow layers, for quick experiments.
    pub fn fast() -> Self {
        Self {
            input_h: 32,
            input_w: 32,
            conv: [8, 16, 32].map(|f| ConvSpec::new(f, 3, 2, 1)).to_vec(),
            trans_fc: vec![128, 64],
            rot_fc: vec![64],
            grip_fc: vec![64],
            gripper: GripperHead::Separate,
        }
    }

    /// A few hundred parameters with every head on one trunk; used by the gradient check.
    pub fn small() -> Self {
        Self {
            input_h: 8,
            input_w: 8,
            conv: vec![ConvSpec::new(4, 3, 2, 1), ConvSpec::new(6, 3, 2, 1)],
            trans_fc: vec![8, 6],
            rot_fc: vec![8],
            grip_fc: vec![6],
            gripper: GripperHead::Joint,
        }
    }

    /// AlexNet-sized trunk for 224×224 input (strided convolutions stand in for pooling).
    pub fn alexnet() -> Self {
        Self {
            input_h: 224,
            input_w: 224,
            conv: vec![
                ConvSpec::new(64, 11, 4, 2),
                ConvSpec::new(192, 5, 2, 2),
                ConvSpec::new(384, 3, 2, 1),
                ConvSpec::new(256, 3, 1, 1),
                ConvSpec::new(256, 3, 2, 1),
                ConvSpec::new(256, 3, 1, 1),
            ],
            trans_fc: vec![512, 256],
            rot_fc: vec![256],
            grip_fc: vec![256],
            gripper: GripperHead::Separate,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "default" => Ok(Self::desk()),
            "fast" => Ok(Self::fast()),
            "small" => Ok(Self::small()),
            "alexnet" => Ok(Self::alexnet()),
            _ => Err(Error::InvalidArgument(format!(
                "unknown net preset {name:?} (expected one of {:?})",
                Self::PRESETS
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk_shapes().map(|_| ())
    }

    fn trunk_shapes(&self) -> Result<Vec<ConvShape>> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.input_h == 0 || self.input_w == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.conv.is_empty() {
            return bad("at least one convolution layer is required".into());
        }
        if self.trans_fc.iter().chain(&self.rot_fc).chain(&self.grip_fc).any(|&d| d == 0) {
            return bad("dense widths must be positive".into());
        }
        let (mut c, mut h, mut w) = (3, self.input_h, self.input_w);
        let mut out = Vec::new();
        for (i, l) in self.conv.iter().enumerate() {
            if l.filters == 0 || l.kernel == 0 {
                return bad(format!("conv layer {i} has a zero dimension"));
            }
            let Some(s) = ConvShape::new(c, l.filters, l.kernel, l.stride, l.pad, h, w) else {
                return bad(format!("conv layer {i} does not fit a {h}x{w} input"));
            };
            (c, h, w) = (s.cout, s.ho, s.wo);
            out.push(s);
        }
        Ok(out)
    }

    pub fn latent_dim(&self) -> Result<usize> {
        let s = self.trunk_shapes()?;
        let last = s.last().expect("validated non-empty");
        Ok(last.cout * last.ho * last.wo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Every weight and bias as named views into one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: NetConfig,
    pub init_seed: u64,
    pub tensors: Vec<TensorInfo>,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &self.values[t.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    din: usize,
    dout: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    shape: ConvShape,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    He,
    Out,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    inits: Vec<(Init, usize)>,
    len: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Option<(Init, usize)>) -> usize {
        let offset = self.len;
        self.len += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo { name, shape, offset });
        self.inits.push(init.unwrap_or((Init::He, 0)));
        offset
    }

    fn dense_chain(&mut self, prefix: &str, din: usize, hidden: &[usize], dout: usize) -> Vec<Dense> {
        let mut dims = vec![din];
        dims.extend_from_slice(hidden);
        dims.push(dout);
        let n = dims.len() - 1;
        (0..n)
            .map(|i| {
                let tag = if i + 1 == n { "out".to_string() } else { format!("fc{i}") };
                let init = if i + 1 == n { Init::Out } else { Init::He };
                let (a, b) = (dims[i], dims[i + 1]);
                Dense {
                    din: a,
                    dout: b,
                    w: self.add(format!("{prefix}.{tag}.weight"), vec![b, a], Some((init, a))),
                    b: self.add(format!("{prefix}.{tag}.bias"), vec![b], None),
                }
            })
            .collect()
    }
}

/// One trunk with any subset of heads.
#[derive(Debug, Clone)]
pub(crate) struct Net {
    convs: Vec<Conv>,
    latent: usize,
    trans: Vec<Dense>,
    rot: Vec<Dense>,
    grip: Vec<Dense>,
    input_h: usize,
    input_w: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct NetCache {
    bsz: usize,
    cols: Vec<Vec<f64>>,
    conv_out: Vec<Vec<f64>>,
    trans_in: Vec<Vec<f64>>,
    rot_in: Vec<Vec<f64>>,
    grip_in: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct NetOutput {
    pub x_hat: Option<Vec<f64>>,
    pub w_hat: Option<Vec<f64>>,
    pub g_logits: Option<Vec<f64>>,
}

fn dense_forward(p: &[f64], layers: &[Dense], mut x: Vec<f64>, bsz: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut inputs = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let mut y = linear_forward(&x, bsz, l.din, l.dout, &p[l.w..l.w + l.dout * l.din], &p[l.b..l.b + l.dout]);
        if i + 1 < layers.len() {
            relu_inplace(&mut y);
        }
        inputs.push(x);
        x = y;
    }
    (inputs, x)
}

fn dense_backward(p: &[f64], grad: &mut [f64], layers: &[Dense], inputs: &[Vec<f64>], mut dy: Vec<f64>, bsz: usize) -> Vec<f64> {
    for (i, l) in layers.iter().enumerate().rev() {
        if i + 1 < layers.len() {
            relu_backward_inplace(&mut dy, &inputs[i + 1]);
        }
        let (gw, gb) = split_two(grad, l.w, l.dout * l.din, l.b, l.dout);
        dy = linear_backward(&dy, &inputs[i], bsz, l.din, l.dout, &p[l.w..l.w + l.dout * l.din], gw, gb);
    }
    dy
}

/// Two disjoint mutable windows into one buffer.
fn split_two(buf: &mut [f64], a: usize, alen: usize, b: usize, blen: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a + alen <= b, "weight tensor must precede its bias");
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + alen], &mut hi[..blen])
}

impl Net {
    fn build(b: &mut Builder, prefix: &str, cfg: &NetConfig, motion: bool, gripper: bool) -> Result<Self> {
        let shapes = cfg.trunk_shapes()?;
        let convs = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| Conv {
                shape: *s,
                w: b.add(format!("{prefix}conv{i}.weight"), vec![s.cout, s.cin, s.k, s.k], Some((Init::He, s.patch()))),
                b: b.add(format!("{prefix}conv{i}.bias"), vec![s.cout], None),
            })
            .collect();
        let latent = cfg.latent_dim()?;
        let (trans, rot) = if motion {
            (
                b.dense_chain(&format!("{prefix}trans"), latent, &cfg.trans_fc, 3),
                b.dense_chain(&format!("{prefix}rot"), latent + 3, &cfg.rot_fc, 6),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let grip = if gripper {
            b.dense_chain(&format!("{prefix}grip"), latent, &cfg.grip_fc, 2)
        } else {
            Vec::new()
        };
        Ok(Self {
            convs,
            latent,
            trans,
            rot,
            grip,
            input_h: cfg.input_h,
            input_w: cfg.input_w,
        })
    }

    fn forward(&self, p: &[f64], images: &[&ImageTensor]) -> Result<(NetOutput, NetCache)> {
        let bsz = images.len();
        let (h, w) = (self.input_h, self.input_w);
        let plane = h * w;
        let mut x = vec![0.0; 3 * bsz * plane];
        for (bi, img) in images.iter().enumerate() {
            if img.height() != h || img.width() != w {
                return Err(Error::Shape(format!(
                    "image is {}x{}, network expects {h}x{w}",
                    img.height(),
                    img.width()
                )));
            }
            let d = img.data();
            for c in 0..3 {
                let dst = (c * bsz + bi) * plane;
                for (o, &v) in x[dst..dst + plane].iter_mut().zip(&d[c * plane..(c + 1) * plane]) {
                    *o = v as f64 - 0.5;
                }
            }
        }
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut conv_out = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let s = &c.shape;
            let (mut y, col) = conv_forward(&x, s, bsz, &p[c.w..c.w + s.cout * s.patch()], &p[c.b..c.b + s.cout]);
            relu_inplace(&mut y);
            cols.push(col);
            conv_out.push(y.clone());
            x = y;
        }
        let last = &self.convs.last().expect("non-empty trunk").shape;
        let latent = cbp_to_bd(&x, last.cout, bsz, last.ho * last.wo);
        let mut out = NetOutput::default();
        let (mut trans_in, mut rot_in, mut grip_in) = (Vec::new(), Vec::new(), Vec::new());
        if !self.trans.is_empty() {
            let (ti, xh) = dense_forward(p, &self.trans, latent.clone(), bsz);
            let mut cat = Vec::with_capacity(bsz * (self.latent + 3));
            for bi in 0..bsz {
                cat.extend_from_slice(&latent[bi * self.latent..(bi + 1) * self.latent]);
                cat.extend_from_slice(&xh[bi * 3..bi * 3 + 3]);
            }
            let (ri, wh) = dense_forward(p, &self.rot, cat, bsz);
            trans_in = ti;
            rot_in = ri;
            out.x_hat = Some(xh);
            out.w_hat = Some(wh);
        }
        if !self.grip.is_empty() {
            let (gi, gl) = dense_forward(p, &self.grip, latent, bsz);
            grip_in = gi;
            out.g_logits = Some(gl);
        }
        Ok((
            out,
            NetCache {
                bsz,
                cols,
                conv_out,
                trans_in,
                rot_in,
                grip_in,
            },
        ))
    }

    /// Accumulate parameter gradients into `grad` (same layout as the parameters).
    fn backward(&self, p: &[f64], cache: &NetCache, dx_hat: &[f64], dw_hat: &[f64], dg: &[f64], grad: &mut [f64]) {
        let bsz = cache.bsz;
        let l = self.latent;
        let mut dlatent = vec![0.0; bsz * l];
        if !self.trans.is_empty() {
            let dcat = dense_backward(p, grad, &self.rot, &cache.rot_in, dw_hat.to_vec(), bsz);
            let mut dxh = dx_hat.to_vec();
            for bi in 0..bsz {
                let row = &dcat[bi * (l + 3)..(bi + 1) * (l + 3)];
                for (d, s) in dlatent[bi * l..(bi + 1) * l].iter_mut().zip(&row[..l]) {
                    *d += s;
                }
                for k in 0..3 {
                    dxh[bi * 3 + k] += row[l + k];
                }
            }
            let dl = dense_backward(p, grad, &self.trans, &cache.trans_in, dxh, bsz);
            for (d, s) in dlatent.iter_mut().zip(&dl) {
                *d += s;
            }
        }
        if !self.grip.is_empty() {
            let dl = dense_backward(p, grad, &self.grip, &cache.grip_in, dg.to_vec(), bsz);
            for (d, s) in dlatent.iter_mut().zip(&dl) {
                *d += s;
            }
        }
        let last = &self.convs.last().expect("non-empty trunk").shape;
        let mut dy = bd_to_cbp(&dlatent, last.cout, bsz, last.ho * last.wo);
        for (i, c) in self.convs.iter().enumerate().rev() {
            relu_backward_inplace(&mut dy, &cache.conv_out[i]);
            let s = &c.shape;
            let (gw, gb) = split_two(grad, c.w, s.cout * s.patch(), c.b, s.cout);
            match conv_backward(&dy, &cache.cols[i], s, bsz, &p[c.w..c.w + s.cout * s.patch()], gw, gb, i > 0) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
    }

    /// Signs of every ReLU input, for detecting kinks during finite differencing.
    pub(crate) fn activation_pattern(cache: &NetCache) -> Vec<bool> {
        cache
            .conv_out
            .iter()
            .chain(cache.trans_in.iter().skip(1))
            .chain(cache.rot_in.iter().skip(1))
            .chain(cache.grip_in.iter().skip(1))
            .flat_map(|v| v.iter().map(|&a| a > 0.0))
            .collect()
    }
}

/// Raw network outputs for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x_hat: [f64; 3],
    /// Unconstrained; orthonormalized only when executed.
    pub w_hat: [f64; 6],
    pub g_logits: [f64; 2],
}

impl Prediction {
    pub const ZERO: Prediction = Prediction {
        x_hat: [0.0; 3],
        w_hat: [0.0; 6],
        g_logits: [0.0; 2],
    };

    pub fn target(&self) -> [f64; 9] {
        let mut t = [0.0; 9];
        t[..3].copy_from_slice(&self.x_hat);
        t[3..].copy_from_slice(&self.w_hat);
        t
    }

    /// Rotation recovered by Gram-Schmidt, identity if degenerate.
    pub fn rotation(&self) -> RotMat3 {
        rot6d_to_rotmat(&Rot6D(self.w_hat)).unwrap_or_else(|_| RotMat3::identity())
    }

    pub fn close_probability(&self) -> f64 {
        let [a, b] = self.g_logits;
        1.0 / (1.0 + (a - b).exp())
    }

    pub fn gripper(&self) -> GripperState {
        if self.g_logits[1] > self.g_logits[0] {
            GripperState::Close
        } else {
            GripperState::Open
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyCache {
    nets: Vec<NetCache>,
}

impl PolicyCache {
    pub(crate) fn activation_pattern(&self) -> Vec<bool> {
        self.nets.iter().flat_map(Net::activation_pattern).collect()
    }
}

/// The full policy: motion network plus the gripper classifier.
#[derive(Debug, Clone)]
pub struct Policy {
    pub params: PolicyParams,
    nets: Vec<Net>,
}

fn build(cfg: &NetConfig) -> Result<(Builder, Vec<Net>)> {
    cfg.validate()?;
    let mut b = Builder {
        tensors: Vec::new(),
        inits: Vec::new(),
        len: 0,
    };
    let mut nets = vec![Net::build(&mut b, "", cfg, true, cfg.gripper == GripperHead::Joint)?];
    if cfg.gripper == GripperHead::Separate {
        nets.push(Net::build(&mut b, "gripper.", cfg, false, true)?);
    }
    Ok((b, nets))
}

impl Policy {
    /// He-normal initialization for hidden layers, zero biases.
    pub fn new(config: NetConfig, init_seed: u64) -> Result<Self> {
        let (b, nets) = build(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut values = vec![0.0; b.len];
        for (t, &(init, fan_in)) in b.tensors.iter().zip(&b.inits) {
            if fan_in == 0 {
                continue;
            }
            let gain = if init == Init::He { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            for v in &mut values[t.range()] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            params: PolicyParams {
                config,
                init_seed,
                tensors: b.tensors,
                values,
            },
            nets,
        })
    }

    pub fn from_params(params: PolicyParams) -> Result<Self> {
        let (b, nets) = build(&params.config)?;
        if b.tensors != params.tensors || b.len != params.values.len() {
            return Err(Error::Shape("parameter tensors do not match the network configuration".into()));
        }
        if !params.is_finite() {
            return Err(Error::InvalidArgument("non-finite parameter values".into()));
        }
        Ok(Self { params, nets })
    }

    pub fn config(&self) -> &NetConfig {
        &self.params.config
    }

    pub fn forward_batch(&self, images: &[&ImageTensor]) -> Result<(Vec<Prediction>, PolicyCache)> {
        let bsz = images.len();
        let mut preds = vec![Prediction::ZERO; bsz];
        let mut caches = Vec::with_capacity(self.nets.len());
        for net in &self.nets {
            let (out, cache) = net.forward(&self.params.values, images)?;
            for (i, p) in preds.iter_mut().enumerate() {
                if let Some(x) = &out.x_hat {
                    p.x_hat.copy_from_slice(&x[i * 3..i * 3 + 3]);
                }
                if let Some(w) = &out.w_hat {
                    p.w_hat.copy_from_slice(&w[i * 6..i * 6 + 6]);
                }
                if let Some(g) = &out.g_logits {
                    p.g_logits.copy_from_slice(&g[i * 2..i * 2 + 2]);
                }
            }
            caches.push(cache);
        }
        Ok((preds, PolicyCache { nets: caches }))
    }

    pub fn forward(&self, image: &ImageTensor) -> Result<(Prediction, PolicyCache)> {
        let (p, c) = self.forward_batch(&[image])?;
        Ok((p[0], c))
    }

    pub fn predict(&self, image: &ImageTensor) -> Result<Prediction> {
        Ok(self.forward(image)?.0)
    }

    /// Parameter gradient given per-sample gradients of the loss with respect to the outputs.
    pub fn backward(&self, cache: &PolicyCache, grads: &[LossGrad]) -> Vec<f64> {
        let mut dx = Vec::with_capacity(grads.len() * 3);
        let mut dw = Vec::with_capacity(grads.len() * 6);
        let mut dg = Vec::with_capacity(grads.len() * 2);
        for g in grads {
            dx.extend_from_slice(&g.x_hat);
            dw.extend_from_slice(&g.w_hat);
            dg.extend_from_slice(&g.g_logits);
        }
        let mut grad = vec![0.0; self.params.values.len()];
        for (net, c) in self.nets.iter().zip(&cache.nets) {
            assert_eq!(c.bsz, grads.len(), "cache and gradient batch sizes differ");
            net.backward(&self.params.values, c, &dx, &dw, &dg, &mut grad);
        }
        grad
    }

    pub fn has_gripper(&self) -> bool {
        self.params.config.gripper != GripperHead::Off
    }
}
