//! Reading reconstruction models in the COLMAP text format.
//!
//! Only `cameras.txt` and `images.txt` are consumed; `points3D.txt` is
//! ignored. Records are world-to-camera and get inverted to
//! camera-to-world poses ordered by natural filename order.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quat_to_rotmat, Pose, Quaternion, RotMat3};

#[derive(Debug, Clone, PartialEq)]
pub struct SfmImageRecord {
    pub image_id: u32,
    /// World-to-camera rotation.
    pub q: Quaternion,
    /// World-to-camera translation.
    pub t: Vector3<f64>,
    pub camera_id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmCameraRecord {
    pub camera_id: u32,
    pub model_name: String,
    pub width: u32,
    pub height: u32,
    pub params: Vec<f64>,
}

/// Number of intrinsic parameters for each COLMAP camera model.
pub fn camera_model_param_count(model: &str) -> Option<usize> {
    Some(match model {
        "SIMPLE_PINHOLE" => 3,
        "PINHOLE" => 4,
        "SIMPLE_RADIAL" => 4,
        "RADIAL" => 5,
        "OPENCV" => 8,
        "OPENCV_FISHEYE" => 8,
        "FULL_OPENCV" => 12,
        "FOV" => 5,
        "SIMPLE_RADIAL_FISHEYE" => 4,
        "RADIAL_FISHEYE" => 5,
        "THIN_PRISM_FISHEYE" => 12,
        _ => return None,
    })
}

fn is_comment(line: &str) -> bool {
    line.trim_start().starts_with('#')
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what}: {tok:?}"),
    })
}

fn parse_finite(tok: Option<&str>, what: &str, line: usize) -> Result<f64> {
    let v: f64 = parse_field(tok, what, line)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite {what}"),
        });
    }
    Ok(v)
}

/// Parse the contents of an `images.txt` file.
pub fn parse_images_text(text: &str) -> Result<Vec<SfmImageRecord>> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !is_comment(l))
        .collect();
    if lines.len() % 2 != 0 {
        return Err(Error::Truncated(format!(
            "images file has {} data lines; expected pairs of pose and points lines",
            lines.len()
        )));
    }
    let mut out = Vec::with_capacity(lines.len() / 2);
    let mut ids = HashSet::new();
    for pair in lines.chunks(2) {
        let (ln, line) = pair[0];
        let mut toks = line.split_whitespace();
        let image_id: u32 = parse_field(toks.next(), "IMAGE_ID", ln)?;
        let mut v = [0.0; 7];
        for (slot, name) in v.iter_mut().zip(["QW", "QX", "QY", "QZ", "TX", "TY", "TZ"]) {
            *slot = parse_finite(toks.next(), name, ln)?;
        }
        let camera_id: u32 = parse_field(toks.next(), "CAMERA_ID", ln)?;
        let name = toks.next().ok_or_else(|| Error::Parse {
            line: ln,
            message: "missing field NAME".into(),
        })?;
        if toks.next().is_some() {
            return Err(Error::Parse {
                line: ln,
                message: "unexpected trailing fields after NAME".into(),
            });
        }
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        if q.norm() <= crate::geometry::QUAT_MIN_NORM {
            return Err(Error::Parse {
                line: ln,
                message: "zero quaternion".into(),
            });
        }
        if !ids.insert(image_id) {
            return Err(Error::Parse {
                line: ln,
                message: format!("duplicate IMAGE_ID {image_id}"),
            });
        }
        out.push(SfmImageRecord {
            image_id,
            q,
            t: Vector3::new(v[4], v[5], v[6]),
            camera_id,
            name: name.to_string(),
        });
    }
    Ok(out)
}

/// Serialize records in the canonical `images.txt` layout (empty points lines).
pub fn write_images_text(records: &[SfmImageRecord]) -> String {
    let mut s = String::new();
    s.push_str("# Image list with two lines of data per image:\n");
    s.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
    s.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    let _ = writeln!(
        s,
        "# Number of images: {}, mean observations per image: 0",
        records.len()
    );
    for r in records {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {}",
            r.image_id, r.q.w, r.q.x, r.q.y, r.q.z, r.t.x, r.t.y, r.t.z, r.camera_id, r.name
        );
        s.push('\n');
    }
    s
}

pub fn parse_cameras_text(text: &str) -> Result<Vec<SfmCameraRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        if is_comment(line) || line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let camera_id: u32 = parse_field(toks.next(), "CAMERA_ID", ln)?;
        let model_name: String = parse_field(toks.next(), "MODEL", ln)?;
        let width: u32 = parse_field(toks.next(), "WIDTH", ln)?;
        let height: u32 = parse_field(toks.next(), "HEIGHT", ln)?;
        if width == 0 || height == 0 {
            return Err(Error::Parse {
                line: ln,
                message: "camera dimensions must be positive".into(),
            });
        }
        let params = toks
            .map(|t| parse_finite(Some(t), "PARAMS", ln))
            .collect::<Result<Vec<_>>>()?;
        match camera_model_param_count(&model_name) {
            Some(n) if n == params.len() => {}
            Some(n) => {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("{model_name} takes {n} params, got {}", params.len()),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("unknown camera model {model_name}"),
                })
            }
        }
        out.push(SfmCameraRecord {
            camera_id,
            model_name,
            width,
            height,
            params,
        });
    }
    Ok(out)
}

pub fn write_cameras_text(cameras: &[SfmCameraRecord]) -> String {
    let mut s = String::new();
    s.push_str("# Camera list with one line of data per camera:\n");
    s.push_str("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let _ = writeln!(s, "# Number of cameras: {}", cameras.len());
    for c in cameras {
        let _ = write!(s, "{} {} {} {}", c.camera_id, c.model_name, c.width, c.height);
        for p in &c.params {
            let _ = write!(s, " {p}");
        }
        s.push('\n');
    }
    s
}

/// Header-only `points3D.txt`; point clouds are never produced.
pub fn empty_points_text() -> &'static str {
    "# 3D point list with one line of data per point:\n\
     #   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n\
     # Number of points: 0, mean track length: 0\n"
}

/// Compare strings treating embedded digit runs as numbers ("f2" < "f10").
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut a, mut b) = (a.as_bytes(), b.as_bytes());
    loop {
        match (a.first(), b.first()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let na = a.iter().take_while(|c| c.is_ascii_digit()).count();
                let nb = b.iter().take_while(|c| c.is_ascii_digit()).count();
                let (da, db) = (&a[..na], &b[..nb]);
                let ta = trim_zeros(da);
                let tb = trim_zeros(db);
                let ord = ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb)).then(na.cmp(&nb));
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[na..];
                b = &b[nb..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                a = &a[1..];
                b = &b[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let k = d.iter().take_while(|&&c| c == b'0').count();
    &d[k.min(d.len().saturating_sub(1))..]
}

/// Last run of digits in the file stem, if any.
pub fn frame_number(name: &str) -> Option<usize> {
    let stem = Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name);
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePose {
    pub frame_index: usize,
    /// Camera-to-world.
    pub pose: Pose,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePoseSeq {
    pub trajectory_id: String,
    pub frames: Vec<FramePose>,
    /// Number of frames the demonstration was recorded with, when known.
    pub expected_frames: Option<usize>,
}

impl FramePoseSeq {
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }
}

/// Invert world-to-camera records into camera-to-world poses in natural name order.
///
/// Frame indices come from the trailing number of each filename; names
/// without digits fall back to their rank.
pub fn to_camera_poses(trajectory_id: &str, records: &[SfmImageRecord]) -> Result<FramePoseSeq> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(Error::Ambiguous(format!("image name {} appears twice", r.name)));
        }
    }
    let mut sorted: Vec<&SfmImageRecord> = records.iter().collect();
    sorted.sort_by(|a, b| natural_cmp(&a.name, &b.name));
    let numbered = sorted.iter().all(|r| frame_number(&r.name).is_some());
    let mut frames = Vec::with_capacity(sorted.len());
    for (rank, r) in sorted.iter().enumerate() {
        let w2c_rot = quat_to_rotmat(&r.q)?;
        let rc: RotMat3 = w2c_rot.transpose();
        let center = -(rc.0 * r.t);
        let frame_index = if numbered {
            frame_number(&r.name).unwrap_or(rank)
        } else {
            rank
        };
        if let Some(prev) = frames.last().map(|f: &FramePose| f.frame_index) {
            if frame_index <= prev {
                return Err(Error::Ambiguous(format!(
                    "frame number {frame_index} of {} does not increase",
                    r.name
                )));
            }
        }
        frames.push(FramePose {
            frame_index,
            pose: Pose::new(rc, center),
            name: r.name.clone(),
        });
    }
    Ok(FramePoseSeq {
        trajectory_id: trajectory_id.to_string(),
        frames,
        expected_frames: None,
    })
}

/// Inverse of [`to_camera_poses`] for a single pose.
pub fn world_to_camera(pose: &Pose) -> (Quaternion, Vector3<f64>) {
    let inv = pose.inverse();
    (inv.rotation.to_quat(), inv.translation)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    pub max_missing_fraction: f64,
    pub step_outlier_factor: f64,
    pub min_frames: usize,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            max_missing_fraction: 0.1,
            step_outlier_factor: 20.0,
            min_frames: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QcRule {
    MissingFrames,
    StepOutlier,
    TooFewFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcStats {
    pub missing_frame_fraction: f64,
    /// Largest step norm divided by the median step norm.
    pub max_step_ratio: f64,
    pub max_step_zscore: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub kept: bool,
    pub reasons: Vec<QcRule>,
    pub stats: QcStats,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn qc_filter(seq: &FramePoseSeq, cfg: &QcConfig) -> QcReport {
    let n = seq.frames.len();
    let expected = seq.expected_frames.unwrap_or_else(|| match (seq.frames.first(), seq.frames.last()) {
        (Some(a), Some(b)) => b.frame_index - a.frame_index + 1,
        _ => 0,
    });
    let missing = if expected == 0 {
        1.0
    } else {
        expected.saturating_sub(n) as f64 / expected as f64
    };
    let steps: Vec<f64> = seq
        .frames
        .windows(2)
        .map(|w| (w[1].pose.translation - w[0].pose.translation).norm())
        .collect();
    let (ratio, z) = if steps.is_empty() {
        (0.0, 0.0)
    } else {
        let max = steps.iter().cloned().fold(0.0, f64::max);
        let med = median(&mut steps.clone());
        let mean = steps.iter().sum::<f64>() / steps.len() as f64;
        let sd = (steps.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / steps.len() as f64).sqrt();
        let ratio = if med > 0.0 {
            max / med
        } else if max > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        (ratio, if sd > 0.0 { (max - mean) / sd } else { 0.0 })
    };
    let mut reasons = Vec::new();
    if missing > cfg.max_missing_fraction {
        reasons.push(QcRule::MissingFrames);
    }
    if ratio > cfg.step_outlier_factor {
        reasons.push(QcRule::StepOutlier);
    }
    if n < cfg.min_frames {
        reasons.push(QcRule::TooFewFrames);
    }
    QcReport {
        kept: reasons.is_empty(),
        reasons,
        stats: QcStats {
            missing_frame_fraction: missing,
            max_step_ratio: ratio,
            max_step_zscore: z,
        },
    }
}

/// Read and parse a model directory (`cameras.txt`, `images.txt`).
pub fn read_model_dir(dir: &Path) -> Result<(Vec<SfmCameraRecord>, Vec<SfmImageRecord>)> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    };
    let cameras = parse_cameras_text(&read("cameras.txt")?)?;
    let images = parse_images_text(&read("images.txt")?)?;
    Ok((cameras, images))
}

// ---------------------------------------------------------------------------
// Pose file: one JSON document per trajectory.

pub const POSE_FILE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Camera-to-world rotation, `[w, x, y, z]` with `w >= 0`.
    pub q: [f64; 4],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrameRecord {
    pub frame_index: usize,
    pub name: String,
    pub pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub schema_version: u32,
    pub trajectory_id: String,
    pub expected_frames: Option<usize>,
    pub frames: Vec<PoseFrameRecord>,
    pub qc: QcReport,
}

impl PoseFile {
    pub fn new(seq: &FramePoseSeq, qc: QcReport) -> Self {
        Self {
            schema_version: POSE_FILE_SCHEMA_VERSION,
            trajectory_id: seq.trajectory_id.clone(),
            expected_frames: seq.expected_frames,
            frames: seq
                .frames
                .iter()
                .map(|f| PoseFrameRecord {
                    frame_index: f.frame_index,
                    name: f.name.clone(),
                    pose: PoseRecord {
                        q: f.pose.rotation.to_quat().to_array(),
                        t: [f.pose.translation.x, f.pose.translation.y, f.pose.translation.z],
                    },
                })
                .collect(),
            qc,
        }
    }

    pub fn to_seq(&self) -> Result<FramePoseSeq> {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                Ok(FramePose {
                    frame_index: f.frame_index,
                    pose: Pose::new(
                        quat_to_rotmat(&Quaternion::from_array(f.pose.q))?,
                        Vector3::from(f.pose.t),
                    ),
                    name: f.name.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FramePoseSeq {
            trajectory_id: self.trajectory_id.clone(),
            frames,
            expected_frames: self.expected_frames,
        })
    }
}
