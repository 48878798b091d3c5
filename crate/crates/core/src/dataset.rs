//! Demonstrations, the dataset manifest, and split strategies.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_trajectory, relative_pose, rotmat_to_6d, Rot6D};
use crate::gripper::{align_actions, GripperState};
use crate::sfm::FramePoseSeq;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const LABELS_SCHEMA_VERSION: u32 = 1;

/// Translation labels are snapped to this grid.
pub const LABEL_QUANTUM: f64 = 1e-8;

/// Training-fraction presets (1, 5, 10, 25, 50, 75 and 100 percent).
pub const FRACTION_PRESETS: [f64; 7] = [0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Push,
    Stack,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "push" => Ok(Task::Push),
            "stack" => Ok(Task::Stack),
            _ => Err(Error::InvalidArgument(format!("unknown task {s:?}"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Push => "push",
            Task::Stack => "stack",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionLabel {
    pub dx: [f64; 3],
    pub w: Rot6D,
    pub g: GripperState,
}

impl ActionLabel {
    /// The nine regression targets `(dx, w)`.
    pub fn target(&self) -> [f64; 9] {
        let mut t = [0.0; 9];
        t[..3].copy_from_slice(&self.dx);
        t[3..].copy_from_slice(&self.w.0);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Frame path relative to the demonstration directory.
    pub frame: String,
    #[serde(flatten)]
    pub label: ActionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub trajectory_id: String,
    pub scene_id: String,
    pub object_tags: Vec<String>,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub schema_version: u32,
    #[serde(flatten)]
    pub meta: DemoMeta,
    pub samples: Vec<Sample>,
}

fn snap(v: f64) -> f64 {
    (v / LABEL_QUANTUM).round() * LABEL_QUANTUM
}

/// Join poses, gripper states and frames into labeled samples.
///
/// `grips[i]` and `frames[i]` belong to `seq.frames[i]`. The result has
/// one sample fewer than there are frames.
pub fn assemble(
    seq: &FramePoseSeq,
    grips: &[GripperState],
    frames: &[String],
    meta: DemoMeta,
) -> Result<Demonstration> {
    let n = seq.frames.len();
    if grips.len() != n || frames.len() != n {
        return Err(Error::Alignment(format!(
            "{} poses, {} gripper states, {} frames",
            n,
            grips.len(),
            frames.len()
        )));
    }
    let g_next = align_actions(grips)?;
    let deltas: Vec<_> = seq
        .frames
        .windows(2)
        .map(|w| relative_pose(&w[0].pose, &w[1].pose))
        .collect();
    let deltas = normalize_trajectory(&deltas)?;
    let samples = deltas
        .iter()
        .zip(g_next)
        .zip(frames)
        .map(|((d, g), frame)| Sample {
            frame: frame.clone(),
            label: ActionLabel {
                dx: [snap(d.dx.x), snap(d.dx.y), snap(d.dx.z)],
                w: rotmat_to_6d(&d.rot),
                g,
            },
        })
        .collect();
    Ok(Demonstration {
        schema_version: LABELS_SCHEMA_VERSION,
        meta,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoDescriptor {
    pub id: String,
    pub scene_id: String,
    pub object_tags: Vec<String>,
    pub task: Task,
    /// Demonstration directory, relative to the manifest.
    pub dir: String,
    /// Position in collection order.
    pub order: usize,
    /// QC verdict once ingested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    Sequential,
    Random,
    DiversityA,
    DiversityB,
    SceneHoldout,
}

impl std::str::FromStr for SplitStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sequential" => SplitStrategy::Sequential,
            "random" => SplitStrategy::Random,
            "diversity_a" | "diversity-a" | "A" => SplitStrategy::DiversityA,
            "diversity_b" | "diversity-b" | "B" => SplitStrategy::DiversityB,
            "scene_holdout" | "scene-holdout" => SplitStrategy::SceneHoldout,
            _ => return Err(Error::InvalidArgument(format!("unknown split strategy {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quota: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub spec: SplitSpec,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub demos: Vec<DemoDescriptor>,
    #[serde(default)]
    pub splits: BTreeMap<String, SplitRecord>,
}

impl DatasetManifest {
    pub fn new(demos: Vec<DemoDescriptor>) -> Result<Self> {
        let m = Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            demos,
            splits: BTreeMap::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported manifest schema_version {}",
                self.schema_version
            )));
        }
        let mut ids = HashSet::new();
        let mut orders = HashSet::new();
        for d in &self.demos {
            if !ids.insert(d.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate demo id {}", d.id)));
            }
            if !orders.insert(d.order) {
                return Err(Error::InvalidArgument(format!(
                    "collection order {} used twice",
                    d.order
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// Descriptors sorted by collection order.
    pub fn in_order(&self) -> Vec<&DemoDescriptor> {
        let mut v: Vec<_> = self.demos.iter().collect();
        v.sort_by_key(|d| d.order);
        v
    }

    pub fn get(&self, id: &str) -> Option<&DemoDescriptor> {
        self.demos.iter().find(|d| d.id == id)
    }

    /// Sub-manifest with only the given ids (splits dropped).
    pub fn restrict(&self, ids: &[String]) -> DatasetManifest {
        let keep: HashSet<&str> = ids.iter().map(|s| s.as_str()).collect();
        DatasetManifest {
            schema_version: self.schema_version,
            demos: self
                .demos
                .iter()
                .filter(|d| keep.contains(d.id.as_str()))
                .cloned()
                .collect(),
            splits: BTreeMap::new(),
        }
    }

    /// Descriptors that passed QC (or were never checked).
    pub fn kept(&self) -> DatasetManifest {
        let ids: Vec<String> = self
            .demos
            .iter()
            .filter(|d| d.kept != Some(false))
            .map(|d| d.id.clone())
            .collect();
        self.restrict(&ids)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Exclusive writer lock next to a manifest; released on drop.
#[derive(Debug)]
pub struct ManifestLock {
    path: PathBuf,
}

impl ManifestLock {
    pub fn acquire(manifest: &Path) -> Result<Self> {
        let mut name = manifest.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::Locked(manifest.to_path_buf())
                } else {
                    Error::io(&path, e)
                }
            })?;
        Ok(Self { path })
    }
}

impl Drop for ManifestLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {f} outside (0, 1]")));
    }
    Ok(())
}

/// `ceil(fraction * n)`, tolerant of representation error (0.7 * 10 is 7).
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Sequential or random fractional split: `(selected, rest)`.
pub fn split_fraction(m: &DatasetManifest, spec: &SplitSpec) -> Result<(Vec<String>, Vec<String>)> {
    if m.is_empty() {
        return Err(Error::Empty("manifest has no demonstrations".into()));
    }
    let fraction = spec
        .fraction
        .ok_or_else(|| Error::InvalidArgument("fractional split needs a fraction".into()))?;
    check_fraction(fraction)?;
    let mut ordered: Vec<String> = m.in_order().into_iter().map(|d| d.id.clone()).collect();
    let k = fraction_count(fraction, ordered.len());
    match spec.strategy {
        SplitStrategy::Sequential => {}
        SplitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            ordered.shuffle(&mut rng);
        }
        s => {
            return Err(Error::InvalidArgument(format!(
                "{s:?} is not a fractional strategy"
            )))
        }
    }
    let rest = ordered.split_off(k);
    Ok((ordered, rest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiversityMode {
    /// Dense: whole scenes, in collection order.
    A,
    /// Diverse: one demonstration per scene, round robin.
    B,
}

/// Scenes in order of first appearance, each with its demos in collection order.
fn scenes_in_order(m: &DatasetManifest) -> Vec<(String, Vec<String>)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for d in m.in_order() {
        let i = *index.entry(d.scene_id.as_str()).or_insert_with(|| {
            groups.push((d.scene_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(d.id.clone());
    }
    groups
}

pub fn split_diversity(m: &DatasetManifest, quota: usize, mode: DiversityMode) -> Result<Vec<String>> {
    if quota > m.len() {
        return Err(Error::InvalidArgument(format!(
            "quota {quota} exceeds corpus size {}",
            m.len()
        )));
    }
    let groups = scenes_in_order(m);
    let mut out = Vec::with_capacity(quota);
    match mode {
        DiversityMode::A => {
            for id in groups.iter().flat_map(|(_, ids)| ids) {
                if out.len() == quota {
                    break;
                }
                out.push(id.clone());
            }
        }
        DiversityMode::B => {
            let mut round = 0;
            while out.len() < quota {
                for (_, ids) in &groups {
                    if out.len() == quota {
                        break;
                    }
                    if let Some(id) = ids.get(round) {
                        out.push(id.clone());
                    }
                }
                round += 1;
            }
        }
    }
    Ok(out)
}

/// Hold out whole scenes: `(train, test)`.
pub fn scene_holdout(m: &DatasetManifest, holdout_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    check_fraction(holdout_fraction)?;
    let groups = scenes_in_order(m);
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "scene holdout needs at least 2 scenes, corpus has {}",
            groups.len()
        )));
    }
    let mut scenes: Vec<&String> = groups.iter().map(|(s, _)| s).collect();
    scenes.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scenes.shuffle(&mut rng);
    let k = ((holdout_fraction * scenes.len() as f64).round() as usize).clamp(1, scenes.len() - 1);
    let test_scenes: HashSet<&str> = scenes[..k].iter().map(|s| s.as_str()).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for d in m.in_order() {
        if test_scenes.contains(d.scene_id.as_str()) {
            test.push(d.id.clone());
        } else {
            train.push(d.id.clone());
        }
    }
    Ok((train, test))
}

/// Apply any split strategy: `(train, test-or-rest)`.
pub fn apply_split(m: &DatasetManifest, spec: &SplitSpec) -> Result<(Vec<String>, Vec<String>)> {
    match spec.strategy {
        SplitStrategy::Sequential | SplitStrategy::Random => split_fraction(m, spec),
        SplitStrategy::DiversityA | SplitStrategy::DiversityB => {
            if m.is_empty() {
                return Err(Error::Empty("manifest has no demonstrations".into()));
            }
            let quota = match (spec.quota, spec.fraction) {
                (Some(q), _) => q,
                (None, Some(f)) => {
                    check_fraction(f)?;
                    fraction_count(f, m.len())
                }
                (None, None) => {
                    return Err(Error::InvalidArgument("diversity split needs a quota or fraction".into()))
                }
            };
            let mode = if spec.strategy == SplitStrategy::DiversityA {
                DiversityMode::A
            } else {
                DiversityMode::B
            };
            let train = split_diversity(m, quota, mode)?;
            let chosen: HashSet<&str> = train.iter().map(|s| s.as_str()).collect();
            let rest = m
                .in_order()
                .into_iter()
                .filter(|d| !chosen.contains(d.id.as_str()))
                .map(|d| d.id.clone())
                .collect();
            Ok((train, rest))
        }
        SplitStrategy::SceneHoldout => scene_holdout(m, spec.fraction.unwrap_or(0.2), spec.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::sfm::FramePose;
    use nalgebra::Vector3;

    fn manifest(scenes: usize, per_scene: usize) -> DatasetManifest {
        let mut demos = Vec::new();
        for s in 0..scenes {
            for k in 0..per_scene {
                let order = s * per_scene + k;
                demos.push(DemoDescriptor {
                    id: format!("d{order:04}"),
                    scene_id: format!("s{s:03}"),
                    object_tags: vec![format!("obj{}", s % 3)],
                    task: Task::Push,
                    dir: format!("demos/d{order:04}"),
                    order,
                    kept: None,
                });
            }
        }
        DatasetManifest::new(demos).unwrap()
    }

    fn seq_from(points: &[[f64; 3]]) -> FramePoseSeq {
        FramePoseSeq {
            trajectory_id: "t".into(),
            frames: points
                .iter()
                .enumerate()
                .map(|(i, p)| FramePose {
                    frame_index: i,
                    pose: Pose::from_translation(Vector3::from(*p)),
                    name: format!("{i:04}.ppm"),
                })
                .collect(),
            expected_frames: None,
        }
    }

    fn meta() -> DemoMeta {
        DemoMeta {
            trajectory_id: "t".into(),
            scene_id: "s".into(),
            object_tags: vec![],
            task: Task::Push,
        }
    }

    fn frames(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("frames/{i:04}.ppm")).collect()
    }

    #[test]
    fn assemble_static_pair_is_degenerate() {
        let seq = seq_from(&[[0.0; 3], [0.0; 3]]);
        let err = assemble(&seq, &[GripperState::Open; 2], &frames(2), meta()).unwrap_err();
        assert_eq!(err.kind(), "degenerate_trajectory");
    }

    #[test]
    fn assemble_pure_translation() {
        let seq = seq_from(&[[0.0; 3], [1.0, 0.0, 0.0], [1.0, 3.0, 0.0]]);
        let g = [GripperState::Open, GripperState::Open, GripperState::Close];
        let demo = assemble(&seq, &g, &frames(3), meta()).unwrap();
        assert_eq!(demo.samples.len(), 2);
        let mean: f64 = demo
            .samples
            .iter()
            .map(|s| Vector3::from(s.label.dx).norm())
            .sum::<f64>()
            / 2.0;
        assert!((mean - 1.0).abs() < 1e-8);
        assert_eq!(demo.samples[0].label.dx, [0.5, 0.0, 0.0]);
        assert_eq!(demo.samples[1].label.g, GripperState::Close);
        assert_eq!(demo.samples[0].label.w, Rot6D::identity());
        assert_eq!(demo.samples[1].frame, "frames/0001.ppm");
    }

    #[test]
    fn assemble_length_mismatch() {
        let seq = seq_from(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let err = assemble(&seq, &[GripperState::Open; 3], &frames(2), meta()).unwrap_err();
        assert_eq!(err.kind(), "alignment");
    }

    #[test]
    fn labels_json_round_trip() {
        let seq = seq_from(&[[0.0; 3], [1.0, 0.0, 0.0], [1.0, 3.0, 0.0]]);
        let demo = assemble(&seq, &[GripperState::Open; 3], &frames(3), meta()).unwrap();
        let text = serde_json::to_string(&demo).unwrap();
        assert!(text.contains("\"g\":0"));
        let back: Demonstration = serde_json::from_str(&text).unwrap();
        assert_eq!(back, demo);
    }

    #[test]
    fn sequential_half() {
        let m = manifest(10, 1);
        let spec = SplitSpec { strategy: SplitStrategy::Sequential, fraction: Some(0.5), quota: None, seed: 0 };
        let (train, rest) = split_fraction(&m, &spec).unwrap();
        assert_eq!(train, ["d0000", "d0001", "d0002", "d0003", "d0004"]);
        assert_eq!(rest.len(), 5);
        let all = SplitSpec { fraction: Some(1.0), ..spec.clone() };
        assert_eq!(split_fraction(&m, &all).unwrap().0.len(), 10);
        assert_eq!(fraction_count(0.7, 10), 7);
        assert_eq!(fraction_count(0.01, 10), 1);
    }

    #[test]
    fn split_errors() {
        let empty = DatasetManifest::new(vec![]).unwrap();
        let spec = SplitSpec { strategy: SplitStrategy::Random, fraction: Some(0.5), quota: None, seed: 1 };
        assert_eq!(split_fraction(&empty, &spec).unwrap_err().kind(), "empty");
        let m = manifest(3, 2);
        let bad = SplitSpec { fraction: Some(0.0), ..spec.clone() };
        assert!(split_fraction(&m, &bad).is_err());
        let bad = SplitSpec { fraction: Some(1.5), ..spec };
        assert!(split_fraction(&m, &bad).is_err());
        assert!(split_diversity(&m, 7, DiversityMode::A).is_err());
        assert!(scene_holdout(&manifest(1, 5), 0.5, 0).is_err());
    }

    #[test]
    fn random_split_seeds_differ_and_are_uniform_over_scenes() {
        let m = manifest(100, 10);
        let mk = |seed| SplitSpec { strategy: SplitStrategy::Random, fraction: Some(0.1), quota: None, seed };
        let (a, _) = split_fraction(&m, &mk(1)).unwrap();
        let (b, _) = split_fraction(&m, &mk(2)).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(b.len(), 100);
        assert_ne!(a, b);
        assert_eq!(split_fraction(&m, &mk(1)).unwrap().0, a);
        // Chi-square over ten scene blocks of ten scenes each (expected 10 per block).
        for ids in [&a, &b] {
            let mut counts = [0usize; 10];
            for id in ids {
                let d = m.get(id).unwrap();
                let scene: usize = d.scene_id[1..].parse().unwrap();
                counts[scene / 10] += 1;
            }
            let chi2: f64 = counts.iter().map(|&c| (c as f64 - 10.0).powi(2) / 10.0).sum();
            // 99.9th percentile of chi-square with 9 degrees of freedom.
            assert!(chi2 < 27.88, "chi2 = {chi2}, counts = {counts:?}");
        }
    }

    #[test]
    fn diversity_modes() {
        let m = manifest(100, 10);
        assert_eq!(split_diversity(&m, 1000, DiversityMode::A).unwrap().len(), 1000);
        assert_eq!(split_diversity(&m, 1000, DiversityMode::B).unwrap().len(), 1000);
        let scenes = |ids: &[String]| ids.iter().map(|i| m.get(i).unwrap().scene_id.clone()).collect::<HashSet<_>>();
        let a = split_diversity(&m, 100, DiversityMode::A).unwrap();
        let b = split_diversity(&m, 100, DiversityMode::B).unwrap();
        assert_eq!(scenes(&a).len(), 10);
        assert_eq!(scenes(&b).len(), 100);
        assert_eq!(a, (0..100).map(|i| format!("d{i:04}")).collect::<Vec<_>>());
    }

    #[test]
    fn holdout_keeps_scenes_whole() {
        let m = manifest(2, 4);
        let (train, test) = scene_holdout(&m, 0.5, 3).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 4);
        let m = manifest(50, 4);
        let (train, test) = scene_holdout(&m, 0.2, 9).unwrap();
        let sc = |ids: &[String]| ids.iter().map(|i| m.get(i).unwrap().scene_id.clone()).collect::<HashSet<_>>();
        assert_eq!(sc(&test).len(), 10);
        assert!(sc(&train).is_disjoint(&sc(&test)));
        assert_eq!(sc(&train).len() + sc(&test).len(), 50);
        let all: HashSet<_> = train.iter().chain(&test).collect();
        assert_eq!(all.len(), 200);
    }

    #[test]
    fn manifest_validation_and_lock() {
        let mut m = manifest(2, 2);
        m.demos[1].id = m.demos[0].id.clone();
        assert!(m.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = manifest(2, 2);
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
        let lock = ManifestLock::acquire(&path).unwrap();
        assert_eq!(ManifestLock::acquire(&path).unwrap_err().kind(), "locked");
        drop(lock);
        ManifestLock::acquire(&path).unwrap();
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sequential_splits_are_nested(n in 1usize..80, f1 in 0.01..1.0f64, f2 in 0.01..1.0f64) {
                let m = manifest(n, 1);
                let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
                let mk = |f| SplitSpec { strategy: SplitStrategy::Sequential, fraction: Some(f), quota: None, seed: 0 };
                let a = split_fraction(&m, &mk(lo)).unwrap().0;
                let b = split_fraction(&m, &mk(hi)).unwrap().0;
                prop_assert!(a.iter().all(|id| b.contains(id)));
            }

            #[test]
            fn splits_are_reproducible(seed in any::<u64>(), f in 0.05..1.0f64) {
                let m = manifest(12, 3);
                for strategy in [SplitStrategy::Random, SplitStrategy::Sequential, SplitStrategy::DiversityA,
                                 SplitStrategy::DiversityB, SplitStrategy::SceneHoldout] {
                    let spec = SplitSpec { strategy, fraction: Some(f), quota: None, seed };
                    prop_assert_eq!(apply_split(&m, &spec).unwrap(), apply_split(&m, &spec).unwrap());
                }
            }

            #[test]
            fn assemble_count_is_frames_minus_one(steps in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 1..30)) {
                let mut pts = vec![[0.0; 3]];
                for s in &steps {
                    let l = *pts.last().unwrap();
                    pts.push([l[0] + s[0], l[1] + s[1], l[2] + s[2] + 0.01]);
                }
                let seq = seq_from(&pts);
                let n = pts.len();
                let demo = assemble(&seq, &vec![GripperState::Open; n], &frames(n), meta()).unwrap();
                prop_assert_eq!(demo.samples.len(), n - 1);
            }
        }
    }
}
