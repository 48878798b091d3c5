//! The `toolbc` command line.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};

use crate::augment::{source_size, AugmentSpec};
use crate::dataset::{
    apply_split, write_json, DatasetManifest, ManifestLock, SplitRecord, SplitSpec, SplitStrategy, Task,
};
use crate::error::{Error, Result};
use crate::gripper::LabelConfig;
use crate::pipeline::{
    assemble_dir, demo_dirs, describe, ingest_dir, label_dir, load_demos, load_samples, read_labels, LABELS_FILE,
};
use crate::policy::{
    eval_bc_mse, grad_check, load_checkpoint, predict_all, random_baseline_mse, save_checkpoint, train,
    GradCheckConfig, GripperHead, LossWeights, LrSchedule, NetConfig, Policy, TrainConfig,
};
use crate::sfm::QcConfig;
use crate::sim::{
    generate_demo_retrying, rollout, write_bundle, Controller, Corruption, DemoOptions, Disturbance,
    ExpertController, PolicyController, RandomController, RolloutOptions, RolloutResult, SimConfig, TaskSpec,
};
use crate::study::{run_study, StudyConfig};

#[derive(Debug, Parser)]
#[command(name = "toolbc", version, about = "Behavior cloning from tool-mounted camera demonstrations")]
pub struct Cli {
    /// Output root. Relative paths in flags and config files resolve against it.
    #[arg(long, env = "TOOLBC_OUT", global = true, default_value = ".")]
    pub out: PathBuf,
    /// JSON object whose keys override the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Validate the configuration and print it without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate simulator demonstration bundles.
    GenSim(GenSimArgs),
    /// Convert SfM models to camera poses and run quality control.
    Ingest(IngestArgs),
    /// Label gripper states from fingertip detections.
    Label(LabelArgs),
    /// Join poses and gripper states into action labels.
    Assemble(AssembleArgs),
    /// Record a train/test split in the manifest.
    Split(SplitArgs),
    /// Train a policy.
    Train(TrainArgs),
    /// Score a checkpoint by BC-MSE.
    Eval(EvalArgs),
    /// Run closed-loop episodes in the simulator.
    Rollout(RolloutArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Write SVG overlays of true and predicted actions.
    Viz(VizArgs),
    /// Train and score a grid of data fractions and augmentations.
    Study(StudyArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSimArgs {
    #[arg(long, default_value = "push")]
    pub task: Task,
    #[arg(long, default_value_t = 10)]
    pub scenes: u64,
    #[arg(long, default_value_t = 10)]
    pub demos_per_scene: u64,
    /// Seed of the first scene.
    #[arg(long, default_value_t = 0)]
    pub scene_offset: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "demos")]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 34)]
    pub render_px: usize,
    /// Fixed global pose scale; random per demo when unset.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Fingertip detection noise in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub detection_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub detection_dropout: f64,
    #[arg(long, default_value_t = 0.0)]
    pub pose_noise_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    pub pose_noise_m: f64,
    /// Fraction of pose records to drop.
    #[arg(long, default_value_t = 0.0)]
    pub drop_fraction: f64,
    #[arg(long)]
    pub outlier_frame: Option<usize>,
    #[arg(long, default_value_t = 50.0)]
    pub outlier_factor: f64,
    #[arg(long, default_value_t = 10)]
    pub max_retries: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestArgs {
    /// Directory holding one sub-directory per demonstration.
    #[arg(long, default_value = "demos")]
    pub root: PathBuf,
    /// Defaults to `<root>/manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = QcConfig::default().max_missing_fraction)]
    pub max_missing_fraction: f64,
    #[arg(long, default_value_t = QcConfig::default().step_outlier_factor)]
    pub step_outlier_factor: f64,
    #[arg(long, default_value_t = QcConfig::default().min_frames)]
    pub min_frames: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelArgs {
    #[arg(long, default_value = "demos")]
    pub root: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Close threshold in pixels; 8% of the image width when unset.
    #[arg(long)]
    pub close_thresh: Option<f64>,
    /// Open threshold in pixels; 12% of the image width when unset.
    #[arg(long)]
    pub open_thresh: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub min_confidence: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssembleArgs {
    #[arg(long, default_value = "demos")]
    pub root: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitArgs {
    #[arg(long, default_value = "demos/manifest.json")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub strategy: SplitStrategy,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub quota: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Name under which the split is stored.
    #[arg(long)]
    pub name: Option<String>,
    /// Split only the training side of this stored split.
    #[arg(long)]
    pub within: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOpts {
    /// Network preset: desk, fast, small or alexnet.
    #[arg(long, default_value = "fast")]
    pub net: String,
    /// Gripper head: off, separate or joint.
    #[arg(long)]
    pub gripper_head: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Learning-rate schedule: constant or cosine.
    #[arg(long, default_value = "constant")]
    pub schedule: String,
    #[arg(long, default_value_t = 1.0)]
    pub l1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dir_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rot: f64,
    #[arg(long, default_value_t = 1.0)]
    pub grip: f64,
}

impl TrainOpts {
    pub fn to_config(&self, augment: &str, seed: u64) -> Result<TrainConfig> {
        let mut net = NetConfig::preset(&self.net)?;
        if let Some(g) = &self.gripper_head {
            net.gripper = match g.as_str() {
                "off" => GripperHead::Off,
                "separate" => GripperHead::Separate,
                "joint" => GripperHead::Joint,
                _ => return Err(Error::InvalidArgument(format!("unknown gripper head {g:?}"))),
            };
        }
        net.validate()?;
        let mut cfg = TrainConfig::new(net);
        cfg.loss = LossWeights {
            l1: self.l1,
            l2: self.l2,
            dir: self.dir_weight,
            rot: self.rot,
            grip: self.grip,
        };
        cfg.loss.validate()?;
        cfg.augment = AugmentSpec::parse(augment, seed)?;
        cfg.optim.epochs = self.epochs;
        cfg.optim.lr = self.lr;
        cfg.optim.batch_size = self.batch_size;
        cfg.optim.seed = seed;
        cfg.optim.schedule = match self.schedule.as_str() {
            "constant" => LrSchedule::Constant,
            "cosine" => LrSchedule::Cosine,
            s => return Err(Error::InvalidArgument(format!("unknown schedule {s:?}"))),
        };
        if cfg.optim.batch_size == 0 || !(cfg.optim.lr > 0.0) {
            return Err(Error::InvalidArgument("batch_size and lr must be positive".into()));
        }
        cfg.init_seed = seed;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long, default_value = "demos/manifest.json")]
    pub manifest: PathBuf,
    /// Stored split providing train and held-out ids; all kept demos train when unset.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value = "none")]
    pub augment: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/train")]
    pub run_dir: PathBuf,
    /// Save a checkpoint every N epochs (0 keeps only the final one).
    #[arg(long, default_value_t = 1)]
    pub checkpoint_every: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "demos/manifest.json")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// Which side of the split to score: test or train.
    #[arg(long, default_value = "test")]
    pub side: String,
    /// Defaults to `eval.json` next to the checkpoint.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutArgs {
    #[arg(long, default_value = "push")]
    pub task: Task,
    /// Policy checkpoint; required for the policy controller.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Controller: policy, expert or random.
    #[arg(long, default_value = "policy")]
    pub controller: String,
    #[arg(long, default_value_t = 100)]
    pub episodes: u64,
    /// Episodes cycle through this many scenes.
    #[arg(long, default_value_t = 10)]
    pub scenes: u64,
    /// Seed of the first scene; the default keeps clear of generated training scenes.
    #[arg(long, default_value_t = 1000)]
    pub scene_offset: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Step at which the goal (push) or base block (stack) is moved.
    #[arg(long)]
    pub disturb_step: Option<usize>,
    #[arg(long, default_value_t = 0.03)]
    pub disturb_offset: f64,
    #[arg(long, default_value_t = 150)]
    pub max_steps: usize,
    /// Meters per unit of predicted translation; the expert step size when unset.
    #[arg(long)]
    pub action_scale: Option<f64>,
    #[arg(long)]
    pub render_px: Option<usize>,
    #[arg(long, default_value = "rollouts/rollouts.jsonl")]
    pub output: PathBuf,
    /// Include per-step trajectories in the episode records.
    #[arg(long)]
    pub record: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckArgs {
    #[arg(long, default_value = "small")]
    pub net: String,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value = "grad_check.json")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VizArgs {
    /// An assembled demonstration directory.
    #[arg(long)]
    pub demo: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<demo>/viz`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyArgs {
    #[arg(long, default_value = "demos/manifest.json")]
    pub manifest: PathBuf,
    /// fig4-fractions, fig5-augment-grid or appendixH-diversity.
    #[arg(long)]
    pub preset: Option<String>,
    /// Only use demonstrations of this task.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub augment: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<SplitStrategy>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 0.2)]
    pub holdout_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub holdout_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "study")]
    pub output: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

/// Failure reported on stderr as `{"error": {"kind", "message"}}`.
#[derive(Debug)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    pub code: i32,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
            code: 1,
        }
    }
}

impl Failure {
    pub fn to_json(&self) -> Value {
        json!({"error": {"kind": self.kind, "message": self.message}})
    }
}

struct Ctx {
    out: PathBuf,
    dry_run: bool,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }
}

/// Overlay the keys of a JSON config object onto parsed flags.
pub fn merge_config<T: Serialize + DeserializeOwned>(args: &T, config: Option<&Value>) -> Result<T> {
    let Some(cfg) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(args)?)?);
    };
    let Value::Object(over) = cfg else {
        return Err(Error::InvalidArgument("config file must hold a JSON object".into()));
    };
    let mut base = serde_json::to_value(args)?;
    let obj = base.as_object_mut().expect("argument structs serialize to objects");
    for (k, v) in over {
        if !obj.contains_key(k) {
            return Err(Error::InvalidArgument(format!("unknown config key {k:?}")));
        }
        obj.insert(k.clone(), v.clone());
    }
    Ok(serde_json::from_value(base)?)
}

fn read_config(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn log(event: Value) {
    let _ = writeln!(std::io::stderr(), "{event}");
}

fn manifest_path(root: &Path, manifest: &Option<PathBuf>, ctx: &Ctx) -> PathBuf {
    manifest.as_ref().map(|m| ctx.path(m)).unwrap_or_else(|| root.join("manifest.json"))
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Rebuild the manifest entries for every demo under `root`, keeping stored splits.
fn refresh_manifest(root: &Path, manifest: &Path) -> Result<DatasetManifest> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut demos = Vec::new();
    for (i, d) in demo_dirs(root)?.iter().enumerate() {
        demos.push(describe(d, &relative(d, base), i)?);
    }
    let mut m = DatasetManifest::new(demos)?;
    if manifest.exists() {
        let old = DatasetManifest::load(manifest)?;
        m.splits = old.splits;
    }
    m.save(manifest)?;
    Ok(m)
}

fn cmd_gen_sim(a: &GenSimArgs, ctx: &Ctx) -> Result<Value> {
    let dir = ctx.path(&a.dir);
    let opts = DemoOptions {
        scale: a.scale,
        pose_noise_deg: a.pose_noise_deg,
        pose_noise_m: a.pose_noise_m,
        detection_noise_px: a.detection_noise,
        detection_dropout: a.detection_dropout,
        corruption: Corruption {
            drop_fraction: a.drop_fraction,
            outlier_frame: a.outlier_frame,
            outlier_factor: a.outlier_factor,
        },
    };
    if a.render_px == 0 || !(0.0..=1.0).contains(&a.drop_fraction) || !(0.0..=1.0).contains(&a.detection_dropout) {
        return Err(Error::InvalidArgument("render_px must be positive and fractions in [0, 1]".into()));
    }
    if ctx.dry_run {
        return Ok(json!({"demos": a.scenes * a.demos_per_scene}));
    }
    let config = SimConfig {
        render_px: a.render_px,
        ..SimConfig::default()
    };
    let mut listed = Vec::new();
    for sc in a.scene_offset..a.scene_offset + a.scenes {
        let spec = TaskSpec::new(a.task, sc, config);
        for k in 0..a.demos_per_scene {
            let seed = a.seed * 1_000_000_000 + sc * 1000 + k * 7;
            let b = generate_demo_retrying(&spec, seed, &opts, a.max_retries)?;
            if !b.meta.failed_seeds.is_empty() {
                log(json!({"event": "regenerated", "scene": spec.scene_id(), "failed_seeds": b.meta.failed_seeds, "used_seed": b.meta.seed}));
            }
            write_bundle(&dir.join(&b.meta.trajectory_id), &b)?;
            listed.push(json!({"id": b.meta.trajectory_id, "seed": b.meta.seed, "frames": b.frames.len(), "failed_seeds": b.meta.failed_seeds}));
        }
    }
    let summary = json!({"task": a.task, "demos": listed});
    write_json(&dir.join("gen_sim.json"), &summary)?;
    Ok(json!({"demos": listed.len(), "dir": a.dir}))
}

fn cmd_ingest(a: &IngestArgs, ctx: &Ctx) -> Result<Value> {
    let root = ctx.path(&a.root);
    let manifest = manifest_path(&root, &a.manifest, ctx);
    let qc = QcConfig {
        max_missing_fraction: a.max_missing_fraction,
        step_outlier_factor: a.step_outlier_factor,
        min_frames: a.min_frames,
    };
    let dirs = demo_dirs(&root)?;
    if ctx.dry_run {
        return Ok(json!({"demos": dirs.len()}));
    }
    let _lock = ManifestLock::acquire(&manifest)?;
    let mut reports = Vec::new();
    let mut kept = 0;
    for d in &dirs {
        let p = ingest_dir(d, &qc)?;
        kept += p.qc.kept as usize;
        if !p.qc.kept {
            log(json!({"event": "rejected", "demo": p.trajectory_id, "reasons": p.qc.reasons}));
        }
        reports.push(json!({"id": p.trajectory_id, "frames": p.frames.len(), "qc": p.qc}));
    }
    refresh_manifest(&root, &manifest)?;
    let summary = json!({"demos": dirs.len(), "kept": kept, "reports": reports});
    write_json(&root.join("ingest_report.json"), &summary)?;
    Ok(json!({"demos": dirs.len(), "kept": kept}))
}

fn cmd_label(a: &LabelArgs, ctx: &Ctx) -> Result<Value> {
    let root = ctx.path(&a.root);
    let manifest = manifest_path(&root, &a.manifest, ctx);
    let cfg = match (a.close_thresh, a.open_thresh) {
        (Some(c), Some(o)) => Some(LabelConfig {
            close_thresh: c,
            open_thresh: o,
            min_confidence: a.min_confidence,
        }),
        (None, None) => None,
        _ => return Err(Error::InvalidArgument("set both close_thresh and open_thresh or neither".into())),
    };
    let dirs = demo_dirs(&root)?;
    if ctx.dry_run {
        return Ok(json!({"demos": dirs.len()}));
    }
    let _lock = ManifestLock::acquire(&manifest)?;
    let mut rows = Vec::new();
    for d in &dirs {
        let cfg = match cfg {
            Some(c) => Some(c),
            None => {
                let (cams, _) = crate::sfm::read_model_dir(&d.join("sfm"))?;
                cams.first().map(|c| LabelConfig {
                    min_confidence: a.min_confidence,
                    ..LabelConfig::for_image_width(c.width as f64)
                })
            }
        };
        let states = label_dir(d, cfg)?;
        let flagged = states.iter().filter(|s| s.flagged).count();
        let transitions = states.windows(2).filter(|w| w[0].g != w[1].g).count();
        let (meta, _) = crate::pipeline::demo_meta(d)?;
        rows.push(json!({"id": meta.trajectory_id, "frames": states.len(), "flagged": flagged, "transitions": transitions}));
    }
    refresh_manifest(&root, &manifest)?;
    write_json(&root.join("label_report.json"), &json!({"demos": rows}))?;
    Ok(json!({"demos": dirs.len()}))
}

fn cmd_assemble(a: &AssembleArgs, ctx: &Ctx) -> Result<Value> {
    let root = ctx.path(&a.root);
    let manifest = manifest_path(&root, &a.manifest, ctx);
    let dirs = demo_dirs(&root)?;
    if ctx.dry_run {
        return Ok(json!({"demos": dirs.len()}));
    }
    let _lock = ManifestLock::acquire(&manifest)?;
    let (mut assembled, mut samples, mut skipped) = (0, 0, Vec::new());
    for d in &dirs {
        match assemble_dir(d) {
            Ok(demo) => {
                assembled += 1;
                samples += demo.samples.len();
            }
            Err(e @ Error::DegenerateTrajectory(_)) => {
                let stale = d.join(LABELS_FILE);
                if stale.exists() {
                    std::fs::remove_file(&stale).map_err(|err| Error::io(&stale, err))?;
                }
                let (meta, _) = crate::pipeline::demo_meta(d)?;
                log(json!({"event": "skipped", "demo": meta.trajectory_id, "reason": e.to_string()}));
                skipped.push(meta.trajectory_id);
            }
            Err(e) => return Err(e),
        }
    }
    let m = refresh_manifest(&root, &manifest)?;
    let summary = json!({"assembled": assembled, "samples": samples, "skipped": skipped, "manifest_demos": m.len()});
    write_json(&root.join("assemble_report.json"), &summary)?;
    Ok(summary)
}

fn split_name(a: &SplitArgs) -> String {
    if let Some(n) = &a.name {
        return n.clone();
    }
    let s = crate::study::strategy_name(a.strategy);
    match (a.quota, a.fraction) {
        (Some(q), _) => format!("{s}-q{q}"),
        (None, Some(f)) => format!("{s}-{f}"),
        _ => s.to_string(),
    }
}

fn cmd_split(a: &SplitArgs, ctx: &Ctx) -> Result<Value> {
    let path = ctx.path(&a.manifest);
    let m = DatasetManifest::load(&path)?;
    let pool = match &a.within {
        Some(w) => {
            let rec = m
                .splits
                .get(w)
                .ok_or_else(|| Error::InvalidArgument(format!("no stored split {w:?}")))?;
            m.restrict(&rec.train)
        }
        None => m.kept(),
    };
    let spec = SplitSpec {
        strategy: a.strategy,
        fraction: a.fraction,
        quota: a.quota,
        seed: a.seed,
    };
    let (train, test) = apply_split(&pool, &spec)?;
    let name = split_name(a);
    let out = json!({"name": name, "train": train, "test": test});
    if ctx.dry_run {
        return Ok(out);
    }
    let _lock = ManifestLock::acquire(&path)?;
    let mut m = DatasetManifest::load(&path)?;
    m.splits.insert(name, SplitRecord { spec, train, test });
    m.save(&path)?;
    Ok(out)
}

fn split_ids(m: &DatasetManifest, split: &Option<String>) -> Result<(Vec<String>, Vec<String>)> {
    match split {
        Some(s) => {
            let r = m
                .splits
                .get(s)
                .ok_or_else(|| Error::InvalidArgument(format!("no stored split {s:?}")))?;
            Ok((r.train.clone(), r.test.clone()))
        }
        None => Ok((m.kept().in_order().into_iter().map(|d| d.id.clone()).collect(), Vec::new())),
    }
}

fn cmd_train(a: &TrainArgs, ctx: &Ctx) -> Result<Value> {
    let cfg = a.opts.to_config(&a.augment, a.seed)?;
    let mpath = ctx.path(&a.manifest);
    let m = DatasetManifest::load(&mpath)?;
    let (train_ids, test_ids) = split_ids(&m, &a.split)?;
    if train_ids.is_empty() {
        return Err(Error::Empty("training split has no demonstrations".into()));
    }
    if ctx.dry_run {
        return Ok(json!({"train_demos": train_ids.len(), "test_demos": test_ids.len(), "config": cfg}));
    }
    let root = mpath.parent().unwrap_or(Path::new("."));
    let train_set = load_demos(&m, root, &train_ids)?;
    let test_set = load_demos(&m, root, &test_ids)?;
    let run = ctx.path(&a.run_dir);
    std::fs::create_dir_all(&run).map_err(|e| Error::io(&run, e))?;
    write_json(&run.join("config.json"), &json!({"train": cfg, "split": a.split, "train_ids": train_ids, "test_ids": test_ids}))?;
    let mut log_text = String::new();
    let every = a.checkpoint_every;
    let (params, records) = train(&train_set, &test_set, &cfg, |rec, params| {
        log_text.push_str(&serde_json::to_string(rec)?);
        log_text.push('\n');
        if every > 0 && (rec.epoch + 1) % every == 0 {
            save_checkpoint(&run.join(format!("checkpoints/epoch_{:04}.json", rec.epoch + 1)), params)?;
        }
        Ok(())
    })?;
    write_text(&run.join("train_log.jsonl"), &log_text)?;
    save_checkpoint(&run.join("checkpoint.json"), &params)?;
    let last = records.last();
    let mut metrics = json!({
        "train_demos": train_ids.len(),
        "train_samples": train_set.len(),
        "test_demos": test_ids.len(),
        "test_samples": test_set.len(),
        "epochs": records.len(),
        "final_train_loss": last.map(|r| r.train_loss.total),
        "bc_mse": last.and_then(|r| r.bc_mse),
    });
    if !test_set.is_empty() {
        let base = random_baseline_mse(&test_set, a.seed, 10)?;
        metrics["random_baseline_mse"] = json!(base.bc_mse);
        metrics["ratio_to_random"] = json!(last.and_then(|r| r.bc_mse).map(|b| b / base.bc_mse));
    }
    write_json(&run.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

fn cmd_eval(a: &EvalArgs, ctx: &Ctx) -> Result<Value> {
    let ck = ctx.path(&a.checkpoint);
    let mpath = ctx.path(&a.manifest);
    let m = DatasetManifest::load(&mpath)?;
    let (train_ids, test_ids) = split_ids(&m, &a.split)?;
    let ids = match a.side.as_str() {
        "test" if a.split.is_some() => test_ids,
        "test" => train_ids,
        "train" => train_ids,
        s => return Err(Error::InvalidArgument(format!("side must be test or train, got {s:?}"))),
    };
    let out = a.output.as_ref().map(|o| ctx.path(o)).unwrap_or_else(|| ck.with_file_name("eval.json"));
    let policy = load_checkpoint(&ck)?;
    if ctx.dry_run {
        return Ok(json!({"demos": ids.len(), "output": a.output}));
    }
    let samples = load_demos(&m, mpath.parent().unwrap_or(Path::new(".")), &ids)?;
    let bc = eval_bc_mse(&policy, &samples)?;
    let base = random_baseline_mse(&samples, a.seed, 10)?;
    let mut metrics = json!({
        "demos": ids.len(),
        "samples": bc.samples,
        "bc_mse": bc.bc_mse,
        "bc_mse_dx": bc.dx,
        "bc_mse_w": bc.w,
        "random_baseline_mse": base.bc_mse,
        "ratio_to_random": bc.bc_mse / base.bc_mse,
    });
    if policy.has_gripper() {
        let preds = predict_all(&policy, &samples)?;
        let hits = preds.iter().zip(&samples).filter(|(p, s)| p.gripper() == s.label.g).count();
        metrics["gripper_accuracy"] = json!(hits as f64 / samples.len() as f64);
    }
    write_json(&out, &metrics)?;
    Ok(metrics)
}

fn cmd_rollout(a: &RolloutArgs, ctx: &Ctx) -> Result<Value> {
    let policy: Option<Policy> = match a.controller.as_str() {
        "policy" => {
            let ck = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("the policy controller needs --checkpoint".into()))?;
            Some(load_checkpoint(&ctx.path(ck))?)
        }
        "expert" | "random" => None,
        c => return Err(Error::InvalidArgument(format!("unknown controller {c:?}"))),
    };
    if a.scenes == 0 {
        return Err(Error::InvalidArgument("scenes must be positive".into()));
    }
    let render_px = a
        .render_px
        .or_else(|| policy.as_ref().map(|p| source_size(p.config().input_h)))
        .unwrap_or(SimConfig::default().render_px);
    let config = SimConfig {
        render_px,
        max_steps: a.max_steps,
        ..SimConfig::default()
    };
    let action_scale = a.action_scale.unwrap_or(config.step_size);
    if ctx.dry_run {
        return Ok(json!({"episodes": a.episodes, "render_px": render_px}));
    }
    let mut lines = String::new();
    let mut results: Vec<RolloutResult> = Vec::new();
    for i in 0..a.episodes {
        let spec = TaskSpec::new(a.task, a.scene_offset + i % a.scenes, config);
        let seed = 1_000_000 + a.seed * 100_000 + i;
        let mut opts = RolloutOptions::new(&config);
        opts.record = a.record;
        opts.disturbance = a.disturb_step.map(|step| Disturbance {
            step,
            max_offset: a.disturb_offset,
            seed,
        });
        let mut ctrl: Box<dyn Controller + '_> = match &policy {
            Some(p) => Box::new(PolicyController { policy: p, action_scale }),
            None if a.controller == "expert" => Box::new(ExpertController::new(seed)),
            None => Box::new(RandomController::new(seed)),
        };
        let r = rollout(&spec, seed, ctrl.as_mut(), &opts)?;
        lines.push_str(&serde_json::to_string(&r)?);
        lines.push('\n');
        results.push(r);
    }
    let n = results.len().max(1) as f64;
    let rate = |f: &dyn Fn(&RolloutResult) -> bool| results.iter().filter(|r| f(r)).count() as f64 / n;
    let summary = json!({
        "task": a.task,
        "controller": a.controller,
        "episodes": results.len(),
        "success_rate": rate(&|r| r.success),
        "reached_object_rate": rate(&|r| r.sub_goals.reached_object),
        "reached_goal_rate": rate(&|r| r.sub_goals.reached_goal),
        "mean_steps": results.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        "disturbed": a.disturb_step.is_some(),
    });
    let out = ctx.path(&a.output);
    write_text(&out, &lines)?;
    write_json(&out.with_extension("summary.json"), &summary)?;
    Ok(summary)
}

fn cmd_grad_check(a: &GradCheckArgs, ctx: &Ctx) -> Result<Value> {
    let cfg = GradCheckConfig {
        net: NetConfig::preset(&a.net)?,
        eps: a.eps,
        batch: a.batch,
        seed: a.seed,
        tolerance: a.tolerance,
    };
    cfg.net.validate()?;
    if ctx.dry_run {
        return Ok(json!({"config": cfg}));
    }
    let report = grad_check(&cfg)?;
    write_json(&ctx.path(&a.output), &report)?;
    Ok(json!({"max_rel_error": report.max_rel_error, "passed": report.passed, "tolerance": report.tolerance}))
}

fn cmd_viz(a: &VizArgs, ctx: &Ctx) -> Result<Value> {
    let demo_dir = ctx.path(&a.demo);
    let demo = read_labels(&demo_dir)?;
    let policy = a.checkpoint.as_ref().map(|c| load_checkpoint(&ctx.path(c))).transpose()?;
    let out = a.output.as_ref().map(|o| ctx.path(o)).unwrap_or_else(|| demo_dir.join("viz"));
    if ctx.dry_run {
        return Ok(json!({"frames": demo.samples.len()}));
    }
    let mut samples = load_samples(&demo_dir)?;
    if let Some(k) = a.max_frames {
        samples.truncate(k);
    }
    let preds = policy.as_ref().map(|p| predict_all(p, &samples)).transpose()?;
    for (i, s) in samples.iter().enumerate() {
        let caption = format!("{} {}", demo.meta.trajectory_id, demo.samples[i].frame);
        let svg = crate::viz::frame_svg(&s.image, Some(&s.label), preds.as_ref().map(|p| &p[i]), &caption);
        write_text(&out.join(format!("frame_{i:04}.svg")), &svg)?;
    }
    Ok(json!({"frames": samples.len()}))
}

fn cmd_study(a: &StudyArgs, ctx: &Ctx) -> Result<Value> {
    let base = a.opts.to_config("none", 0)?;
    let mut cfg = match &a.preset {
        Some(p) => StudyConfig::preset(p, base)?,
        None => StudyConfig::new(base),
    };
    if let Some(f) = &a.fractions {
        cfg.fractions = f.clone();
    }
    if let Some(g) = &a.augment {
        cfg.augments = g.clone();
    }
    if let Some(s) = &a.strategies {
        cfg.strategies = s.clone();
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    cfg.holdout_fraction = a.holdout_fraction;
    cfg.holdout_seed = a.holdout_seed;
    cfg.jobs = a.jobs;
    cfg.validate()?;
    let mpath = ctx.path(&a.manifest);
    let mut m = DatasetManifest::load(&mpath)?;
    if let Some(t) = a.task {
        let ids: Vec<String> = m.demos.iter().filter(|d| d.task == t).map(|d| d.id.clone()).collect();
        m = m.restrict(&ids);
    }
    if ctx.dry_run {
        return Ok(json!({"config": cfg, "demos": m.len()}));
    }
    let out = ctx.path(&a.output);
    write_json(&out.join("config.json"), &cfg)?;
    let report = run_study(&m, mpath.parent().unwrap_or(Path::new(".")), &cfg, Some(&out.join("runs")))?;
    write_text(&out.join("study.csv"), &report.to_csv())?;
    write_json(&out.join("summary.json"), &report)?;
    Ok(json!({"rows": report.rows.len(), "random_baseline": report.random_baseline, "csv": a.output.join("study.csv")}))
}

fn dispatch<T, F>(args: &T, config: Option<&Value>, ctx: &Ctx, f: F) -> Result<Value>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce(&T, &Ctx) -> Result<Value>,
{
    let merged = merge_config(args, config)?;
    let out = f(&merged, ctx)?;
    if ctx.dry_run {
        return Ok(json!({"dry_run": true, "args": serde_json::to_value(&merged)?, "plan": out}));
    }
    Ok(out)
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let f = Failure {
                kind: "usage".into(),
                message: e.to_string().trim().to_string(),
                code: 2,
            };
            eprintln!("{}", f.to_json());
            return f.code;
        }
    };
    match execute(&cli) {
        Ok(v) => {
            println!("{v}");
            0
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            f.code
        }
    }
}

pub fn execute(cli: &Cli) -> std::result::Result<Value, Failure> {
    let ctx = Ctx {
        out: cli.out.clone(),
        dry_run: cli.dry_run,
    };
    let config = cli.config.as_ref().map(|p| read_config(&ctx.path(p))).transpose()?;
    let c = config.as_ref();
    let v = match &cli.command {
        Command::GenSim(a) => dispatch(a, c, &ctx, cmd_gen_sim),
        Command::Ingest(a) => dispatch(a, c, &ctx, cmd_ingest),
        Command::Label(a) => dispatch(a, c, &ctx, cmd_label),
        Command::Assemble(a) => dispatch(a, c, &ctx, cmd_assemble),
        Command::Split(a) => dispatch(a, c, &ctx, cmd_split),
        Command::Train(a) => dispatch(a, c, &ctx, cmd_train),
        Command::Eval(a) => dispatch(a, c, &ctx, cmd_eval),
        Command::Rollout(a) => dispatch(a, c, &ctx, cmd_rollout),
        Command::GradCheck(a) => {
            let v = dispatch(a, c, &ctx, cmd_grad_check)?;
            if v.get("passed") == Some(&Value::Bool(false)) {
                return Err(Failure {
                    kind: "gradient_check_failed".into(),
                    message: format!("max relative error {} exceeds tolerance", v["max_rel_error"]),
                    code: 1,
                });
            }
            Ok(v)
        }
        Command::Viz(a) => dispatch(a, c, &ctx, cmd_viz),
        Command::Study(a) => dispatch(a, c, &ctx, cmd_study),
    }?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_overrides_flags() {
        let cli = Cli::try_parse_from(["toolbc", "split", "--strategy", "sequential", "--fraction", "0.5"]).unwrap();
        let Command::Split(a) = cli.command else { panic!() };
        let cfg = json!({"fraction": 0.25, "seed": 4});
        let m = merge_config(&a, Some(&cfg)).unwrap();
        assert_eq!(m.fraction, Some(0.25));
        assert_eq!(m.seed, 4);
        assert_eq!(m.strategy, SplitStrategy::Sequential);
        assert!(merge_config(&a, Some(&json!({"bogus": 1}))).is_err());
        assert!(merge_config(&a, Some(&json!([1]))).is_err());
    }

    #[test]
    fn flattened_training_options_merge() {
        let cli = Cli::try_parse_from(["toolbc", "train", "--epochs", "3"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let m = merge_config(&a, Some(&json!({"lr": 0.01, "net": "small"}))).unwrap();
        assert_eq!(m.opts.epochs, 3);
        assert_eq!(m.opts.lr, 0.01);
        assert_eq!(m.opts.to_config("crop+jitter", 1).unwrap().net, NetConfig::small());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["toolbc", "split"]), 2);
        assert_eq!(run(["toolbc", "frobnicate"]), 2);
    }
}
