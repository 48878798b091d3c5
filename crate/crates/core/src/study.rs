//! Grids of training runs over data fractions, split strategies and
//! augmentations, scored by held-out BC-MSE.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentKind, AugmentSpec, LabeledSample};
use crate::dataset::{
    fraction_count, scene_holdout, split_diversity, split_fraction, DatasetManifest, DiversityMode, SplitSpec,
    SplitStrategy, FRACTION_PRESETS,
};
use crate::error::{Error, Result};
use crate::pipeline::load_samples;
use crate::policy::{eval_bc_mse, random_baseline_mse, train, Policy, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub fractions: Vec<f64>,
    pub augments: Vec<String>,
    pub strategies: Vec<SplitStrategy>,
    pub seeds: Vec<u64>,
    pub holdout_fraction: f64,
    pub holdout_seed: u64,
    pub train: TrainConfig,
    /// Concurrent training runs.
    pub jobs: usize,
}

impl StudyConfig {
    pub const PRESETS: [&'static str; 3] = ["fig4-fractions", "fig5-augment-grid", "appendixH-diversity"];

    pub fn new(train: TrainConfig) -> Self {
        Self {
            fractions: vec![1.0],
            augments: vec!["none".into()],
            strategies: vec![SplitStrategy::Sequential],
            seeds: vec![0, 1, 2],
            holdout_fraction: 0.2,
            holdout_seed: 0,
            train,
            jobs: 1,
        }
    }

    /// Fraction sweep, augmentation pairs at 10%, or dense-versus-diverse at 10%.
    pub fn preset(name: &str, train: TrainConfig) -> Result<Self> {
        let mut c = Self::new(train);
        match name {
            "fig4-fractions" => c.fractions = FRACTION_PRESETS.to_vec(),
            "fig5-augment-grid" => {
                c.fractions = vec![0.1];
                c.augments = augment_grid();
            }
            "appendixH-diversity" => {
                c.fractions = vec![0.1];
                c.strategies = vec![SplitStrategy::DiversityA, SplitStrategy::DiversityB];
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown study preset {name:?}; expected one of {:?}",
                    Self::PRESETS
                )))
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.augments.is_empty() || self.strategies.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("study grid has an empty axis".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::InvalidArgument(format!("fraction {f} outside (0, 1]")));
        }
        if let Some(s) = self.strategies.iter().find(|s| **s == SplitStrategy::SceneHoldout) {
            return Err(Error::InvalidArgument(format!("{s:?} cannot select training data")));
        }
        for a in &self.augments {
            AugmentSpec::parse(a, 0)?;
        }
        self.train.net.validate()?;
        self.train.loss.validate()
    }
}

/// No augmentation, each single augmentation, and every unordered pair.
pub fn augment_grid() -> Vec<String> {
    let k = AugmentKind::ALL;
    let mut out = vec!["none".to_string()];
    out.extend(k.iter().map(|a| a.name().to_string()));
    for i in 0..k.len() {
        for j in i + 1..k.len() {
            out.push(format!("{}+{}", k[i].name(), k[j].name()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub strategy: SplitStrategy,
    pub fraction: f64,
    pub augment: String,
    pub seed: u64,
    pub train_demos: usize,
    pub train_samples: usize,
    pub bc_mse: f64,
    pub bc_mse_dx: f64,
    pub bc_mse_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub strategy: SplitStrategy,
    pub fraction: f64,
    pub augment: String,
    pub seeds: usize,
    pub train_demos: usize,
    pub bc_mse: f64,
    pub bc_mse_std: f64,
    pub bc_mse_dx: f64,
    pub bc_mse_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub train_pool: usize,
    pub test_demos: usize,
    pub test_samples: usize,
    pub test_scenes: Vec<String>,
    pub random_baseline: f64,
    pub rows: Vec<StudyRow>,
    pub runs: Vec<StudyRun>,
}

impl StudyReport {
    pub fn row(&self, strategy: SplitStrategy, fraction: f64, augment: &str) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.fraction == fraction && r.augment == augment)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,fraction,augment,seeds,train_demos,bc_mse,bc_mse_std,bc_mse_dx,bc_mse_w\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                strategy_name(r.strategy),
                r.fraction,
                r.augment,
                r.seeds,
                r.train_demos,
                r.bc_mse,
                r.bc_mse_std,
                r.bc_mse_dx,
                r.bc_mse_w
            ));
        }
        s
    }
}

pub fn strategy_name(s: SplitStrategy) -> &'static str {
    match s {
        SplitStrategy::Sequential => "sequential",
        SplitStrategy::Random => "random",
        SplitStrategy::DiversityA => "diversity_a",
        SplitStrategy::DiversityB => "diversity_b",
        SplitStrategy::SceneHoldout => "scene_holdout",
    }
}

/// Training ids chosen from `pool` for one grid cell.
pub fn select(pool: &DatasetManifest, strategy: SplitStrategy, fraction: f64, seed: u64) -> Result<Vec<String>> {
    match strategy {
        SplitStrategy::DiversityA | SplitStrategy::DiversityB => {
            let mode = if strategy == SplitStrategy::DiversityA {
                DiversityMode::A
            } else {
                DiversityMode::B
            };
            split_diversity(pool, fraction_count(fraction, pool.len()).max(1), mode)
        }
        _ => {
            let spec = SplitSpec {
                strategy,
                fraction: Some(fraction),
                quota: None,
                seed,
            };
            let (mut ids, _) = split_fraction(pool, &spec)?;
            if ids.is_empty() {
                // Tiny pools still train on one demo.
                ids = pool.in_order().first().map(|d| vec![d.id.clone()]).unwrap_or_default();
            }
            Ok(ids)
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Run the whole grid. `root` is the directory the manifest paths are relative to.
/// When `run_dir` is set each run writes its metrics under it.
pub fn run_study(manifest: &DatasetManifest, root: &Path, cfg: &StudyConfig, run_dir: Option<&Path>) -> Result<StudyReport> {
    cfg.validate()?;
    let kept = manifest.kept();
    let (pool_ids, test_ids) = scene_holdout(&kept, cfg.holdout_fraction, cfg.holdout_seed)?;
    let pool = kept.restrict(&pool_ids);
    let mut data: HashMap<String, Vec<LabeledSample>> = HashMap::new();
    for d in kept.in_order() {
        data.insert(d.id.clone(), load_samples(&root.join(&d.dir))?);
    }
    let gather = |ids: &[String]| -> Vec<LabeledSample> { ids.iter().flat_map(|i| data[i].iter().cloned()).collect() };
    let test = gather(&test_ids);
    let mut test_scenes: Vec<String> = test_ids.iter().filter_map(|i| kept.get(i)).map(|d| d.scene_id.clone()).collect();
    test_scenes.dedup();
    let baseline = random_baseline_mse(&test, cfg.holdout_seed, 10)?.bc_mse;

    let mut jobs = Vec::new();
    for &strategy in &cfg.strategies {
        for &fraction in &cfg.fractions {
            for aug in &cfg.augments {
                for &seed in &cfg.seeds {
                    jobs.push((strategy, fraction, aug.clone(), seed));
                }
            }
        }
    }
    let run_one = |(strategy, fraction, aug, seed): &(SplitStrategy, f64, String, u64)| -> Result<StudyRun> {
        let ids = select(&pool, *strategy, *fraction, *seed)?;
        let train_set = gather(&ids);
        let mut tc = cfg.train.clone();
        tc.augment = AugmentSpec {
            seed: *seed,
            ..AugmentSpec::parse(aug, *seed)?
        };
        tc.augment.params = cfg.train.augment.params;
        tc.init_seed = *seed;
        tc.optim.seed = *seed;
        let (params, _) = train(&train_set, &[], &tc, |_, _| Ok(()))?;
        let m = eval_bc_mse(&Policy::from_params(params)?, &test)?;
        let run = StudyRun {
            strategy: *strategy,
            fraction: *fraction,
            augment: aug.trim().to_string(),
            seed: *seed,
            train_demos: ids.len(),
            train_samples: train_set.len(),
            bc_mse: m.bc_mse,
            bc_mse_dx: m.dx,
            bc_mse_w: m.w,
        };
        if let Some(dir) = run_dir {
            let d = dir.join(format!(
                "{}-f{}-{}-s{}",
                strategy_name(*strategy),
                fraction,
                run.augment,
                seed
            ));
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            crate::dataset::write_json(&d.join("metrics.json"), &run)?;
        }
        Ok(run)
    };
    let pool_threads = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let runs: Vec<StudyRun> = pool_threads.install(|| jobs.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;

    let mut rows = Vec::new();
    for &strategy in &cfg.strategies {
        for &fraction in &cfg.fractions {
            for aug in &cfg.augments {
                let name = aug.trim().to_string();
                let cell: Vec<&StudyRun> = runs
                    .iter()
                    .filter(|r| r.strategy == strategy && r.fraction == fraction && r.augment == name)
                    .collect();
                let (m, sd) = mean_std(&cell.iter().map(|r| r.bc_mse).collect::<Vec<_>>());
                rows.push(StudyRow {
                    strategy,
                    fraction,
                    augment: name,
                    seeds: cell.len(),
                    train_demos: cell[0].train_demos,
                    bc_mse: m,
                    bc_mse_std: sd,
                    bc_mse_dx: mean_std(&cell.iter().map(|r| r.bc_mse_dx).collect::<Vec<_>>()).0,
                    bc_mse_w: mean_std(&cell.iter().map(|r| r.bc_mse_w).collect::<Vec<_>>()).0,
                });
            }
        }
    }
    Ok(StudyReport {
        train_pool: pool.len(),
        test_demos: test_ids.len(),
        test_samples: test.len(),
        test_scenes,
        random_baseline: baseline,
        rows,
        runs,
    })
}
