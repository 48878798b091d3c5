//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod support;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use toolbc::dataset::Task;
use toolbc::geometry::{
    conjugate_reflect, quat_to_rotmat, relative_pose, rot6d_to_rotmat, rotmat_to_6d, Pose, Quaternion, RotMat3,
};
use toolbc::pipeline::{assemble_dir, ingest_dir, label_dir};
use toolbc::policy::{direction_loss, grad_check, GradCheckConfig};
use toolbc::sfm::QcConfig;
use toolbc::sim::{generate_demo, write_bundle, DemoOptions, SimConfig, TaskSpec};

type Outcome = Result<String, String>;

const TRAIN: [&str; 6] = ["--epochs", "20", "--lr", "1e-3", "--schedule", "cosine"];

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let t = start.elapsed();
    if t > limit {
        return Err(format!("{detail}; took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()));
    }
    Ok(detail)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> RotMat3 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        if let Ok(r) = quat_to_rotmat(&Quaternion::from_array(q)) {
            return r;
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let t: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-5.0..5.0));
    Pose::new(random_rotation(rng), Vector3::from(t))
}

fn geometry_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_6d = 0.0f64;
    for _ in 0..10_000 {
        let r = random_rotation(&mut rng);
        let back = rot6d_to_rotmat(&rotmat_to_6d(&r)).map_err(|e| e.to_string())?;
        worst_6d = worst_6d.max((r.0 - back.0).norm());
    }
    let mut worst_chain = 0.0f64;
    for _ in 0..10_000 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let c = a.compose(&relative_pose(&a, &b).as_pose());
        worst_chain = worst_chain.max((c.rotation.0 - b.rotation.0).norm()).max((c.translation - b.translation).norm());
    }
    let mut inexact = 0;
    for _ in 0..10_000 {
        let r = random_rotation(&mut rng);
        inexact += (conjugate_reflect(&conjugate_reflect(&r)) != r) as usize;
    }
    let detail = format!("6d round trip {worst_6d:.2e}, composition {worst_chain:.2e}, reflection mismatches {inexact}");
    if worst_6d >= 1e-9 || worst_chain >= 1e-9 || inexact > 0 {
        return Err(detail);
    }
    within(Duration::from_secs(10), start, detail)
}

fn parser_suite() -> Outcome {
    let start = Instant::now();
    let golden = support::golden_round_trip()?;
    let s = support::fuzz_parsers(10_000, 2);
    let detail = format!(
        "golden: {golden}; fuzz: {} cases, {} rejected, {} panics, {} unstructured",
        s.cases, s.rejected, s.panics, s.unstructured
    );
    if s.panics > 0 || s.unstructured > 0 {
        return Err(detail);
    }
    within(Duration::from_secs(30), start, detail)
}

fn file_pipeline(dir: &Path) -> toolbc::Result<toolbc::dataset::Demonstration> {
    ingest_dir(dir, &QcConfig::default())?;
    label_dir(dir, None)?;
    assemble_dir(dir)
}

fn pipeline_identity() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for task in [Task::Push, Task::Stack] {
        for k in 0..50u64 {
            let spec = TaskSpec::new(task, k % 10, SimConfig::default());
            let b = generate_demo(&spec, 100 + k, &DemoOptions::default()).map_err(|e| e.to_string())?;
            let dir = tmp.path().join(&b.meta.trajectory_id);
            write_bundle(&dir, &b).map_err(|e| e.to_string())?;
            let demo = file_pipeline(&dir).map_err(|e| format!("{}: {e}", b.meta.trajectory_id))?;
            if demo.samples.len() != b.ground_truth.samples.len() {
                return Err(format!("{}: sample count differs", b.meta.trajectory_id));
            }
            for (a, g) in demo.samples.iter().zip(&b.ground_truth.samples) {
                if a.label.g != g.label.g {
                    return Err(format!("{}: gripper label differs at {}", b.meta.trajectory_id, a.frame));
                }
                for (x, y) in a.label.target().iter().zip(g.label.target()) {
                    worst = worst.max((x - y).abs());
                }
            }
            count += 1;
        }
    }
    let detail = format!("{count} demos, max abs deviation {worst:.2e}");
    if worst >= 1e-6 {
        return Err(detail);
    }
    within(Duration::from_secs(120), start, detail)
}

fn scale_invariance() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for task in [Task::Push, Task::Stack] {
        for k in 0..10u64 {
            let spec = TaskSpec::new(task, k, SimConfig::default());
            let mut runs = Vec::new();
            for scale in [1.0, 0.1, 7.3] {
                let opts = DemoOptions {
                    scale: Some(scale),
                    ..Default::default()
                };
                let b = generate_demo(&spec, 300 + k, &opts).map_err(|e| e.to_string())?;
                let dir = tmp.path().join(format!("{}-{scale}", b.meta.trajectory_id));
                write_bundle(&dir, &b).map_err(|e| e.to_string())?;
                runs.push(file_pipeline(&dir).map_err(|e| e.to_string())?.samples);
            }
            if runs[1] != runs[0] || runs[2] != runs[0] {
                return Err(format!("{task} demo {k}: labels differ across scales"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} demos bit-identical at scales 0.1, 1, 7.3"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let r = grad_check(&GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let names: Vec<&str> = r.variants.iter().map(|v| v.variant.as_str()).collect();
    let detail = format!("max relative error {:.2e} over variants {names:?}", r.max_rel_error);
    if !r.passed || r.max_rel_error >= 1e-3 {
        return Err(detail);
    }
    within(Duration::from_secs(60), start, detail)
}

fn direction_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = [0.0f64; 3];
    for _ in 0..1000 {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let w: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let (a, b) = (rng.gen_range(0.01..100.0), rng.gen_range(0.01..100.0));
        worst[0] = worst[0].max(direction_loss(&v, &v).abs());
        let scaled = direction_loss(&v.map(|x| x * a), &w.map(|x| x * b));
        worst[1] = worst[1].max((scaled - direction_loss(&v, &w)).abs());
        let vv = Vector3::from(v);
        let perp = vv.cross(&Vector3::from(w));
        worst[2] = worst[2].max((direction_loss(&v, &[perp.x, perp.y, perp.z]) - std::f64::consts::FRAC_PI_2).abs());
    }
    let detail = format!("L(v,v) {:.1e}, scale {:.1e}, orthogonal {:.1e}", worst[0], worst[1], worst[2]);
    if worst.iter().any(|&e| e >= 1e-9) {
        return Err(detail);
    }
    Ok(detail)
}

struct Cli {
    root: PathBuf,
}

impl Cli {
    fn run(&self, args: &[&str]) -> Result<Value, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_toolbc"))
            .args(args)
            .env("TOOLBC_OUT", &self.root)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr).trim()));
        }
        serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())
    }

    fn with(&self, base: &[&str], extra: &[&str]) -> Result<Value, String> {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        self.run(&args)
    }

    fn corpus(&self, task: &str, scenes: &str) -> Result<(), String> {
        self.run(&["gen-sim", "--task", task, "--scenes", scenes, "--demos-per-scene", "10"])?;
        self.run(&["ingest"])?;
        self.run(&["label"])?;
        self.run(&["assemble"])?;
        Ok(())
    }

    /// `fraction,augment -> bc_mse` from a study CSV, or `strategy -> bc_mse`.
    fn study_rows(&self, dir: &str, key: fn(&BTreeMap<&str, &str>) -> String) -> Result<BTreeMap<String, f64>, String> {
        let csv = std::fs::read_to_string(self.root.join(dir).join("study.csv")).map_err(|e| e.to_string())?;
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
        let mut out = BTreeMap::new();
        for l in lines {
            let row: BTreeMap<&str, &str> = header.iter().copied().zip(l.split(',')).collect();
            out.insert(key(&row), row["bc_mse"].parse::<f64>().map_err(|e| e.to_string())?);
        }
        Ok(out)
    }
}

fn learning_signal(push: &Cli) -> Outcome {
    let start = Instant::now();
    let split = push.run(&["split", "--strategy", "scene-holdout", "--fraction", "0.2", "--name", "holdout"])?;
    let m = push.with(&["train", "--split", "holdout", "--run-dir", "runs/holdout", "--checkpoint-every", "0"], &TRAIN)?;
    let ratio = m["ratio_to_random"].as_f64().ok_or("no ratio")?;
    let detail = format!(
        "{} train / {} test demos, bc_mse {:.4} vs random {:.4} ({:.1}%)",
        split["train"].as_array().map_or(0, |a| a.len()),
        split["test"].as_array().map_or(0, |a| a.len()),
        m["bc_mse"].as_f64().unwrap_or(f64::NAN),
        m["random_baseline_mse"].as_f64().unwrap_or(f64::NAN),
        100.0 * ratio
    );
    if !(ratio < 0.1) {
        return Err(detail);
    }
    within(Duration::from_secs(15 * 60), start, detail)
}

fn fraction_study(push: &Cli) -> Result<BTreeMap<String, f64>, String> {
    push.with(
        &["study", "--fractions", "0.1,0.5,1.0", "--augment", "none,crop+jitter,rotate+jitter", "--output", "study-fractions"],
        &TRAIN,
    )?;
    push.study_rows("study-fractions", |r| format!("{},{}", r["fraction"], r["augment"]))
}

fn data_fraction_trend(rows: &BTreeMap<String, f64>) -> Outcome {
    let v: Vec<f64> = ["0.1", "0.5", "1"].iter().map(|f| rows[&format!("{f},none")]).collect();
    let detail = format!("bc_mse at 10/50/100%: {:.4} / {:.4} / {:.4}", v[0], v[1], v[2]);
    if v[0] > v[1] && v[1] > v[2] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn diversity_trend(push: &Cli) -> Outcome {
    push.with(&["study", "--preset", "appendixH-diversity", "--output", "study-diversity"], &TRAIN)?;
    let rows = push.study_rows("study-diversity", |r| r["strategy"].to_string())?;
    let (a, b) = (rows["diversity_a"], rows["diversity_b"]);
    let detail = format!("10% quota bc_mse: A {a:.4}, B {b:.4}");
    if b < a {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn augmentation_trend(rows: &BTreeMap<String, f64>) -> Outcome {
    let none = rows["0.1,none"];
    let cj = rows["0.1,crop+jitter"];
    let rj = rows["0.1,rotate+jitter"];
    let detail = format!("10% bc_mse: none {none:.4}, crop+jitter {cj:.4}, rotate+jitter {rj:.4}");
    if cj <= none || rj <= none {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn success(summary: &Value) -> Result<f64, String> {
    summary["success_rate"].as_f64().ok_or_else(|| "no success rate".into())
}

fn closed_loop(push: &Cli, stack: &Cli) -> Outcome {
    push.with(&["train", "--run-dir", "runs/policy", "--checkpoint-every", "0"], &TRAIN)?;
    let eval = ["--checkpoint", "runs/policy/checkpoint.json", "--episodes", "100", "--scenes", "100"];
    let p = success(&push.with(&["rollout", "--output", "rollouts/push.jsonl"], &eval)?)?;
    let d = success(&push.with(&["rollout", "--disturb-step", "8", "--output", "rollouts/push-disturbed.jsonl"], &eval)?)?;

    stack.corpus("stack", "40")?;
    stack.run(&[
        "train", "--run-dir", "runs/policy", "--checkpoint-every", "0", "--epochs", "15", "--lr", "1e-3", "--schedule",
        "cosine",
    ])?;
    let s = success(&stack.with(&["rollout", "--task", "stack", "--output", "rollouts/stack.jsonl"], &eval)?)?;
    let drop = 100.0 * (p - d);
    let detail = format!(
        "push {:.0}%, stack {:.0}%, push disturbed {:.0}% (drop {drop:.0} points)",
        100.0 * p,
        100.0 * s,
        100.0 * d
    );
    if p >= 0.7 && s >= 0.4 && drop <= 15.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(&p, base, out)?;
        } else {
            let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&p)?);
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let script: &[&[&str]] = &[
        &["gen-sim", "--scenes", "3", "--demos-per-scene", "4", "--detection-noise", "1.5"],
        &["gen-sim", "--task", "stack", "--scenes", "1", "--demos-per-scene", "3", "--scene-offset", "7"],
        &["ingest"],
        &["label"],
        &["assemble"],
        &["split", "--strategy", "random", "--fraction", "0.6", "--seed", "4", "--name", "r"],
        &["split", "--strategy", "diversity-b", "--quota", "3", "--within", "r", "--name", "d"],
        &["train", "--split", "r", "--epochs", "3", "--augment", "crop+jitter+cutout", "--seed", "5"],
        &["eval", "--checkpoint", "runs/train/checkpoint.json", "--split", "r"],
        &["rollout", "--checkpoint", "runs/train/checkpoint.json", "--episodes", "4", "--disturb-step", "3", "--record"],
        &["rollout", "--controller", "random", "--episodes", "4", "--output", "rollouts/random.jsonl"],
        &["grad-check"],
        &["viz", "--demo", "demos/push-scene-0000-000000", "--checkpoint", "runs/train/checkpoint.json", "--max-frames", "3"],
        &["study", "--task", "push", "--fractions", "0.5,1", "--augment", "none,hreflect", "--seeds", "0,1", "--epochs", "1", "--holdout-fraction", "0.34", "--jobs", "2"],
    ];
    let mut trees = Vec::new();
    let mut stdouts = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cli = Cli { root: tmp.path().to_path_buf() };
        let mut out = Vec::new();
        for args in script {
            out.push(cli.run(args)?);
        }
        let mut files = BTreeMap::new();
        collect_files(tmp.path(), tmp.path(), &mut files).map_err(|e| e.to_string())?;
        trees.push(files);
        stdouts.push(out);
    }
    if stdouts[0] != stdouts[1] {
        return Err("command output differs between runs".into());
    }
    let (a, b) = (&trees[0], &trees[1]);
    if a.keys().ne(b.keys()) {
        return Err("runs wrote different file sets".into());
    }
    let differing: Vec<&String> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    let metrics = a.keys().filter(|k| k.contains("metrics") || k.ends_with("eval.json") || k.contains("summary")).count();
    let detail = format!("{} commands, {} files ({metrics} metrics files) compared byte-for-byte", script.len(), a.len());
    if differing.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; differing: {differing:?}"))
    }
}

fn main() {
    let started = Instant::now();
    let mut failures = 0;
    let mut report = |n: usize, name: &str, t0: Instant, r: Outcome| {
        let secs = t0.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    };
    let t = Instant::now();
    report(1, "geometry suite", t, geometry_suite());
    let t = Instant::now();
    report(2, "parser suite", t, parser_suite());
    let t = Instant::now();
    report(3, "pipeline identity", t, pipeline_identity());
    let t = Instant::now();
    report(4, "scale invariance", t, scale_invariance());
    let t = Instant::now();
    report(5, "gradient check", t, gradient_check());
    let t = Instant::now();
    report(6, "direction loss properties", t, direction_properties());

    let push_dir = tempfile::tempdir().expect("tempdir");
    let stack_dir = tempfile::tempdir().expect("tempdir");
    let push = Cli { root: push_dir.path().to_path_buf() };
    let stack = Cli { root: stack_dir.path().to_path_buf() };
    let t = Instant::now();
    let corpus = push.corpus("push", "20");
    report(7, "learning signal", t, corpus.clone().and_then(|_| learning_signal(&push)));
    let t = Instant::now();
    let rows = corpus.clone().and_then(|_| fraction_study(&push));
    report(8, "data-fraction trend", t, rows.as_ref().map_err(Clone::clone).and_then(data_fraction_trend));
    let t = Instant::now();
    report(9, "diversity trend", t, corpus.clone().and_then(|_| diversity_trend(&push)));
    let t = Instant::now();
    report(10, "augmentation trend", t, rows.as_ref().map_err(Clone::clone).and_then(augmentation_trend));
    let t = Instant::now();
    report(11, "closed-loop success", t, corpus.and_then(|_| closed_loop(&push, &stack)));
    let t = Instant::now();
    report(12, "determinism", t, determinism());

    println!("acceptance: {} of 12 passed in {:.0}s", 12 - failures, started.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
