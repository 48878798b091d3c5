//! Per-demonstration file stages: `sfm/` to `poses.json`, detections to
//! `grips.jsonl`, and both to `labels.json`.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::augment::LabeledSample;
use crate::dataset::{assemble, write_json, DatasetManifest, DemoDescriptor, DemoMeta, Demonstration};
use crate::error::{Error, Result};
use crate::gripper::{label_states, read_detections, write_jsonl, LabelConfig, LabeledState};
use crate::image::ImageTensor;
use crate::sfm::{qc_filter, read_model_dir, to_camera_poses, PoseFile, QcConfig};
use crate::sim::read_bundle_meta;

pub const POSES_FILE: &str = "poses.json";
pub const GRIPS_FILE: &str = "grips.jsonl";
pub const LABELS_FILE: &str = "labels.json";

fn read_to_string(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_to_string(p)?)?)
}

/// Metadata and recorded frame count from a directory's `meta.json`.
pub fn demo_meta(dir: &Path) -> Result<(DemoMeta, Option<usize>)> {
    if dir.join("meta.json").exists() {
        let m = read_bundle_meta(dir)?;
        return Ok((m.demo_meta(), Some(m.expected_frames)));
    }
    Err(Error::InvalidArgument(format!("{} has no meta.json", dir.display())))
}

/// Invert the SfM model, run QC and write `poses.json`.
pub fn ingest_dir(dir: &Path, qc: &QcConfig) -> Result<PoseFile> {
    let (meta, expected) = demo_meta(dir)?;
    let (_, images) = read_model_dir(&dir.join("sfm"))?;
    let mut seq = to_camera_poses(&meta.trajectory_id, &images)?;
    seq.expected_frames = expected;
    let report = qc_filter(&seq, qc);
    let file = PoseFile::new(&seq, report);
    write_json(&dir.join(POSES_FILE), &file)?;
    Ok(file)
}

/// Label gripper states from `detections.jsonl` and write `grips.jsonl`.
/// Thresholds default to fractions of the SfM camera width.
pub fn label_dir(dir: &Path, cfg: Option<LabelConfig>) -> Result<Vec<LabeledState>> {
    let cfg = match cfg {
        Some(c) => c,
        None => {
            let (cams, _) = read_model_dir(&dir.join("sfm"))?;
            let w = cams
                .first()
                .ok_or_else(|| Error::Empty("cameras.txt lists no camera".into()))?
                .width;
            LabelConfig::for_image_width(w as f64)
        }
    };
    let p = dir.join("detections.jsonl");
    let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
    let labels = label_states(&read_detections(BufReader::new(f))?, &cfg)?;
    let out = dir.join(GRIPS_FILE);
    std::fs::write(&out, write_jsonl(&labels)).map_err(|e| Error::io(&out, e))?;
    Ok(labels)
}

pub fn read_grips(dir: &Path) -> Result<Vec<LabeledState>> {
    let p = dir.join(GRIPS_FILE);
    read_to_string(&p)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Join `poses.json` and `grips.jsonl` by frame index into `labels.json`.
pub fn assemble_dir(dir: &Path) -> Result<Demonstration> {
    let (meta, _) = demo_meta(dir)?;
    let poses: PoseFile = read_json(&dir.join(POSES_FILE))?;
    if !poses.qc.kept {
        return Err(Error::DegenerateTrajectory(format!(
            "{} was rejected by QC: {:?}",
            meta.trajectory_id, poses.qc.reasons
        )));
    }
    let seq = poses.to_seq()?;
    let by_frame: HashMap<usize, LabeledState> = read_grips(dir)?.into_iter().map(|g| (g.frame_index, g)).collect();
    let grips = seq
        .frames
        .iter()
        .map(|f| {
            by_frame
                .get(&f.frame_index)
                .map(|g| g.g)
                .ok_or_else(|| Error::Alignment(format!("no gripper label for frame {}", f.frame_index)))
        })
        .collect::<Result<Vec<_>>>()?;
    let frames: Vec<String> = seq.frames.iter().map(|f| format!("frames/{}", f.name)).collect();
    for f in &frames {
        if !dir.join(f).exists() {
            return Err(Error::Alignment(format!("pose for missing frame {f}")));
        }
    }
    let demo = assemble(&seq, &grips, &frames, meta)?;
    write_json(&dir.join(LABELS_FILE), &demo)?;
    Ok(demo)
}

pub fn read_labels(dir: &Path) -> Result<Demonstration> {
    read_json(&dir.join(LABELS_FILE))
}

/// Frames and labels of one assembled demonstration.
pub fn load_samples(dir: &Path) -> Result<Vec<LabeledSample>> {
    let demo = read_labels(dir)?;
    demo.samples
        .iter()
        .map(|s| {
            Ok(LabeledSample {
                image: ImageTensor::read_ppm(&dir.join(&s.frame))?,
                label: s.label,
            })
        })
        .collect()
}

/// Samples of the listed demos, concatenated in the given order.
pub fn load_demos(manifest: &DatasetManifest, root: &Path, ids: &[String]) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for id in ids {
        let d = manifest
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown demo {id}")))?;
        out.extend(load_samples(&root.join(&d.dir))?);
    }
    Ok(out)
}

/// Demonstration directories under `root`, in name order.
pub fn demo_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").exists())
        .collect();
    dirs.sort_by(|a, b| crate::sfm::natural_cmp(&a.to_string_lossy(), &b.to_string_lossy()));
    Ok(dirs)
}

/// Manifest entry for a demonstration directory; `kept` comes from its
/// `poses.json` when present.
pub fn describe(dir: &Path, rel: &str, order: usize) -> Result<DemoDescriptor> {
    let (meta, _) = demo_meta(dir)?;
    let kept = if dir.join(POSES_FILE).exists() {
        let p: PoseFile = read_json(&dir.join(POSES_FILE))?;
        Some(p.qc.kept && dir.join(LABELS_FILE).exists())
    } else {
        None
    };
    Ok(DemoDescriptor {
        id: meta.trajectory_id,
        scene_id: meta.scene_id,
        object_tags: meta.object_tags,
        task: meta.task,
        dir: rel.to_string(),
        order,
        kept,
    })
}
