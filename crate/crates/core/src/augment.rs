//! Image augmentations with their coupled label transforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ActionLabel;
use crate::error::{Error, Result};
use crate::geometry::conjugate_reflect_6d;
use crate::image::ImageTensor;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Crop margin as a fraction of the output width (16 px at 240 → 224).
pub const CROP_MARGIN_RATIO: f64 = 16.0 / 240.0;

/// Side length of colored boxes, in pixels at 224 scale.
pub const CUTOUT_RANGE_224: (f64, f64) = (10.0, 60.0);

pub const MAX_ROTATION_DEG: f64 = 45.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: ImageTensor,
    pub label: ActionLabel,
}

/// Input size needed so that cropping yields `out` pixels.
pub fn crop_margin(out: usize) -> usize {
    (CROP_MARGIN_RATIO * out as f64).round() as usize
}

pub fn source_size(out: usize) -> usize {
    out + crop_margin(out)
}

/// Per-sample seed from a global seed, epoch and sample index.
pub fn derive_seed(global: u64, epoch: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(global) ^ epoch) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterFactors {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub fn sample(rng: &mut impl Rng, range: f32) -> Self {
        let mut f = || rng.gen_range(1.0 - range..=1.0 + range);
        JitterFactors {
            brightness: f(),
            contrast: f(),
            saturation: f(),
        }
    }
}

/// Brightness, then contrast, then saturation, clamping after each.
pub fn jitter_with(s: &LabeledSample, f: JitterFactors) -> LabeledSample {
    let mut img = s.image.clone();
    let n = img.height() * img.width();
    let d = img.data_mut();
    if f.brightness != 1.0 {
        for v in d.iter_mut() {
            *v = (*v * f.brightness).clamp(0.0, 1.0);
        }
    }
    if f.contrast != 1.0 {
        let mean = (0..3)
            .map(|c| LUMA[c] as f64 * d[c * n..(c + 1) * n].iter().map(|&v| v as f64).sum::<f64>())
            .sum::<f64>() as f32
            / n as f32;
        for v in d.iter_mut() {
            *v = (mean + f.contrast * (*v - mean)).clamp(0.0, 1.0);
        }
    }
    if f.saturation != 1.0 {
        for i in 0..n {
            let gray = LUMA[0] * d[i] + LUMA[1] * d[n + i] + LUMA[2] * d[2 * n + i];
            for c in 0..3 {
                let v = &mut d[c * n + i];
                *v = (gray + f.saturation * (*v - gray)).clamp(0.0, 1.0);
            }
        }
    }
    LabeledSample {
        image: img,
        label: s.label,
    }
}

pub fn jitter(s: &LabeledSample, seed: u64) -> LabeledSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter_with(s, JitterFactors::sample(&mut rng, 0.2))
}

pub fn crop_at(s: &LabeledSample, top: usize, left: usize, out_h: usize, out_w: usize) -> Result<LabeledSample> {
    Ok(LabeledSample {
        image: s.image.window(top, left, out_h, out_w)?,
        label: s.label,
    })
}

fn check_crop(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<()> {
    if out_h > img.height() || out_w > img.width() || out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "cannot crop {}x{} from {}x{}",
            out_h,
            out_w,
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Uniformly random `out_h × out_w` window.
pub fn crop(s: &LabeledSample, out_h: usize, out_w: usize, seed: u64) -> Result<LabeledSample> {
    check_crop(&s.image, out_h, out_w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = rng.gen_range(0..=s.image.height() - out_h);
    let left = rng.gen_range(0..=s.image.width() - out_w);
    crop_at(s, top, left, out_h, out_w)
}

pub fn center_crop(s: &LabeledSample, out_h: usize, out_w: usize) -> Result<LabeledSample> {
    check_crop(&s.image, out_h, out_w)?;
    crop_at(
        s,
        (s.image.height() - out_h) / 2,
        (s.image.width() - out_w) / 2,
        out_h,
        out_w,
    )
}

/// Paint an axis-aligned box, clipped at the borders.
pub fn cutout_box(s: &LabeledSample, top: i64, left: i64, h: usize, w: usize, rgb: [f32; 3]) -> LabeledSample {
    let mut img = s.image.clone();
    let y0 = top.max(0) as usize;
    let x0 = left.max(0) as usize;
    let y1 = ((top + h as i64).max(0) as usize).min(img.height());
    let x1 = ((left + w as i64).max(0) as usize).min(img.width());
    for y in y0..y1 {
        for x in x0..x1 {
            img.set_pixel(y, x, rgb);
        }
    }
    LabeledSample {
        image: img,
        label: s.label,
    }
}

/// Side lengths of the box for an image of the given width.
pub fn cutout_range_for(width: usize) -> (f64, f64) {
    let k = width as f64 / 224.0;
    (CUTOUT_RANGE_224.0 * k, CUTOUT_RANGE_224.1 * k)
}

/// One box with side lengths drawn from `size_range` (pixels), random
/// color, and a uniformly random center.
pub fn cutout_color(s: &LabeledSample, size_range: (f64, f64), seed: u64) -> LabeledSample {
    let (lo, hi) = size_range;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut side = || {
        let v = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        v.max(0.0).round() as usize
    };
    let (h, w) = (side(), side());
    let cy = rng.gen_range(0..s.image.height()) as i64;
    let cx = rng.gen_range(0..s.image.width()) as i64;
    let rgb = [rng.gen(), rng.gen(), rng.gen()];
    if h == 0 || w == 0 {
        return s.clone();
    }
    cutout_box(s, cy - h as i64 / 2, cx - w as i64 / 2, h, w, rgb)
}

/// Bilinear rotation about the image center with edge replication.
/// Positive angles rotate content counter-clockwise on screen.
pub fn rotate_image(img: &ImageTensor, deg: f64) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let (sin, cos) = deg.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // Inverse map; image y points down.
            let sx = (cos * dx - sin * dy + cx).clamp(0.0, w as f64 - 1.0);
            let sy = (sin * dx + cos * dy + cy).clamp(0.0, h as f64 - 1.0);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| src[(c * h + yy) * w + xx];
                let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
                let bot = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
                out[(c * h + y) * w + x] = top + fy * (bot - top);
            }
        }
    }
    ImageTensor::from_planar(h, w, out).expect("same shape")
}

pub fn rotate_by(s: &LabeledSample, deg: f64) -> Result<LabeledSample> {
    if !(deg.abs() <= MAX_ROTATION_DEG) {
        return Err(Error::InvalidArgument(format!(
            "rotation {deg} deg exceeds the {MAX_ROTATION_DEG} deg bound"
        )));
    }
    Ok(LabeledSample {
        image: rotate_image(&s.image, deg),
        label: s.label,
    })
}

/// Rotate by an angle drawn uniformly from `[-deg_range, deg_range]`.
pub fn rotate_small(s: &LabeledSample, deg_range: f64, seed: u64) -> Result<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deg = if deg_range > 0.0 {
        rng.gen_range(-deg_range..=deg_range)
    } else {
        0.0
    };
    rotate_by(s, deg)
}

/// Mirror across the vertical axis and reflect the label to match.
pub fn hreflect(s: &LabeledSample) -> LabeledSample {
    let mut img = s.image.clone();
    let w = img.width();
    for row in img.data_mut().chunks_mut(w) {
        row.reverse();
    }
    let mut label = s.label;
    label.dx[0] = -label.dx[0];
    label.w = conjugate_reflect_6d(&label.w);
    LabeledSample { image: img, label }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Hreflect,
    Rotate,
    Crop,
    Cutout,
    Jitter,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 5] = [
        AugmentKind::Jitter,
        AugmentKind::Crop,
        AugmentKind::Cutout,
        AugmentKind::Rotate,
        AugmentKind::Hreflect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Jitter => "jitter",
            AugmentKind::Crop => "crop",
            AugmentKind::Cutout => "cutout",
            AugmentKind::Rotate => "rotate",
            AugmentKind::Hreflect => "hreflect",
        }
    }
}

impl std::str::FromStr for AugmentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub jitter_range: f32,
    pub rotate_deg: f64,
    pub hreflect_prob: f64,
    /// Cutout side range at 224 scale.
    pub cutout_range: (f64, f64),
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter_range: 0.2,
            rotate_deg: 5.0,
            hreflect_prob: 0.5,
            cutout_range: CUTOUT_RANGE_224,
        }
    }
}

/// A set of augmentations applied together, named like `"crop+jitter"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub kinds: Vec<AugmentKind>,
    #[serde(default)]
    pub params: AugmentParams,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentSpec {
    pub fn none() -> Self {
        Self {
            kinds: Vec::new(),
            params: AugmentParams::default(),
            seed: 0,
        }
    }

    /// Parse `"none"`, `"all"`, or names joined by `+`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let mut kinds: Vec<AugmentKind> = match s.trim() {
            "" | "none" => Vec::new(),
            "all" => AugmentKind::ALL.to_vec(),
            s => s.split('+').map(|p| p.trim().parse()).collect::<Result<_>>()?,
        };
        kinds.sort();
        kinds.dedup();
        Ok(Self {
            kinds,
            params: AugmentParams::default(),
            seed,
        })
    }

    pub fn name(&self) -> String {
        if self.kinds.is_empty() {
            return "none".into();
        }
        let mut ks = self.kinds.clone();
        ks.sort_by_key(|k| AugmentKind::ALL.iter().position(|a| a == k));
        ks.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
    }

    pub fn has(&self, k: AugmentKind) -> bool {
        self.kinds.contains(&k)
    }

    /// Augment one training sample and bring it to `out_h × out_w`.
    /// Geometric operations run first; without `crop` the window is centered.
    pub fn apply(&self, s: &LabeledSample, out_h: usize, out_w: usize, epoch: u64, index: u64) -> Result<LabeledSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch, index));
        let mut sub = move || rng.gen::<u64>();
        let p = &self.params;
        let mut cur = s.clone();
        // Seeds are drawn for every stage so toggling one stage leaves the others' draws intact.
        let seeds: [u64; 5] = [sub(), sub(), sub(), sub(), sub()];
        if self.has(AugmentKind::Hreflect) {
            let mut r = ChaCha8Rng::seed_from_u64(seeds[0]);
            if r.gen_bool(p.hreflect_prob.clamp(0.0, 1.0)) {
                cur = hreflect(&cur);
            }
        }
        if self.has(AugmentKind::Rotate) {
            cur = rotate_small(&cur, p.rotate_deg, seeds[1])?;
        }
        cur = if self.has(AugmentKind::Crop) {
            crop(&cur, out_h, out_w, seeds[2])?
        } else {
            center_crop(&cur, out_h, out_w)?
        };
        if self.has(AugmentKind::Cutout) {
            let k = out_w as f64 / 224.0;
            cur = cutout_color(&cur, (p.cutout_range.0 * k, p.cutout_range.1 * k), seeds[3]);
        }
        if self.has(AugmentKind::Jitter) {
            let mut r = ChaCha8Rng::seed_from_u64(seeds[4]);
            cur = jitter_with(&cur, JitterFactors::sample(&mut r, p.jitter_range));
        }
        Ok(cur)
    }
}
