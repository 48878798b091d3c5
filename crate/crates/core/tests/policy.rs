use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toolbc::dataset::ActionLabel;
use toolbc::geometry::Rot6D;
use toolbc::gripper::GripperState;
use toolbc::image::ImageTensor;
use toolbc::policy::{loss_and_grad, GripperHead, LossWeights, NetConfig, Policy, PolicyParams, Prediction};

/// Plain nested-loop forward pass; values are `[c][y][x]`.
struct Oracle<'a> {
    p: &'a PolicyParams,
    cfg: &'a NetConfig,
}

impl Oracle<'_> {
    fn t(&self, name: &str) -> &[f64] {
        self.p.tensor(name).unwrap_or_else(|| panic!("missing {name}"))
    }

    fn trunk(&self, prefix: &str, img: &ImageTensor) -> Vec<f64> {
        let (mut c, mut h, mut w) = (3, img.height(), img.width());
        let mut x: Vec<f64> = (0..c * h * w)
            .map(|i| {
                let (ch, y, xx) = (i / (h * w), i / w % h, i % w);
                img.pixel(y, xx)[ch] as f64 - 0.5
            })
            .collect();
        for (li, spec) in self.cfg.conv.iter().enumerate() {
            let wt = self.t(&format!("{prefix}conv{li}.weight"));
            let bs = self.t(&format!("{prefix}conv{li}.bias"));
            let (k, s, pad, f) = (spec.kernel, spec.stride, spec.pad as isize, spec.filters);
            let ho = (h + 2 * spec.pad - k) / s + 1;
            let wo = (w + 2 * spec.pad - k) / s + 1;
            let mut y = vec![0.0; f * ho * wo];
            for o in 0..f {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bs[o];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - pad;
                                    let ix = (ox * s + kx) as isize - pad;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wt[((o * c + ci) * k + ky) * k + kx] * x[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        y[(o * ho + oy) * wo + ox] = acc.max(0.0);
                    }
                }
            }
            (c, h, w, x) = (f, ho, wo, y);
        }
        x
    }

    fn mlp(&self, prefix: &str, hidden: &[usize], mut x: Vec<f64>) -> Vec<f64> {
        let n = hidden.len() + 1;
        for i in 0..n {
            let tag = if i + 1 == n { "out".to_string() } else { format!("fc{i}") };
            let wt = self.t(&format!("{prefix}.{tag}.weight"));
            let b = self.t(&format!("{prefix}.{tag}.bias"));
            let y: Vec<f64> = (0..b.len())
                .map(|o| {
                    let v = b[o] + (0..x.len()).map(|j| wt[o * x.len() + j] * x[j]).sum::<f64>();
                    if i + 1 < n {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect();
            x = y;
        }
        x
    }

    fn predict(&self, img: &ImageTensor) -> Prediction {
        let latent = self.trunk("", img);
        let x = self.mlp("trans", &self.cfg.trans_fc, latent.clone());
        let mut cat = latent.clone();
        cat.extend_from_slice(&x);
        let r = self.mlp("rot", &self.cfg.rot_fc, cat);
        let g = match self.cfg.gripper {
            GripperHead::Off => vec![0.0, 0.0],
            GripperHead::Joint => self.mlp("grip", &self.cfg.grip_fc, latent),
            GripperHead::Separate => self.mlp("gripper.grip", &self.cfg.grip_fc, self.trunk("gripper.", img)),
        };
        Prediction {
            x_hat: x.try_into().unwrap(),
            w_hat: r.try_into().unwrap(),
            g_logits: g.try_into().unwrap(),
        }
    }
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::from_planar(h, w, (0..3 * h * w).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

fn perturbed(cfg: NetConfig, seed: u64) -> Policy {
    let p = Policy::new(cfg, seed).unwrap();
    let mut params = p.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Nonzero biases so that every term of the oracle is exercised.
    for v in &mut params.values {
        *v += rng.gen_range(-0.05..0.05);
    }
    Policy::from_params(params).unwrap()
}

#[test]
fn forward_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, gripper) in [
        ("small", GripperHead::Joint),
        ("small", GripperHead::Separate),
        ("small", GripperHead::Off),
        ("fast", GripperHead::Separate),
    ] {
        let mut cfg = NetConfig::preset(name).unwrap();
        cfg.gripper = gripper;
        let policy = perturbed(cfg.clone(), 17);
        let oracle = Oracle { p: &policy.params, cfg: &cfg };
        for _ in 0..3 {
            let img = random_image(cfg.input_h, cfg.input_w, &mut rng);
            let a = policy.predict(&img).unwrap();
            let b = oracle.predict(&img);
            let err = a
                .x_hat
                .iter()
                .chain(&a.w_hat)
                .chain(&a.g_logits)
                .zip(b.x_hat.iter().chain(&b.w_hat).chain(&b.g_logits))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "{name} {gripper:?}: {err}");
        }
    }
}

fn v3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-3.0..3.0f64).prop_filter("away from zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2)
}

proptest! {
    // The direction term depends only on the direction of x_hat, so its
    // gradient has no component along x_hat.
    #[test]
    fn direction_gradient_is_orthogonal_to_prediction(x in v3(), t in v3()) {
        let pred = Prediction { x_hat: x, w_hat: Rot6D::identity().0, g_logits: [0.0; 2] };
        let label = ActionLabel { dx: t, w: Rot6D::identity(), g: GripperState::Open };
        let (_, g) = loss_and_grad(&pred, &label, &LossWeights::direction_only(), false);
        let dot: f64 = g.x_hat.iter().zip(&x).map(|(a, b)| a * b).sum();
        let scale = g.x_hat.iter().map(|v| v.abs()).sum::<f64>() * x.iter().map(|v| v.abs()).sum::<f64>();
        prop_assert!(dot.abs() <= 1e-9 * scale.max(1.0), "{dot}");
        prop_assert!(g.w_hat.iter().chain(&g.g_logits).all(|v| *v == 0.0));
    }
}
