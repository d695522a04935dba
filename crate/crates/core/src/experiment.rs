//! The three-mode comparison: for each seed, generate a scene set, train the
//! single, vessel and content nets independently, then score every mode on
//! the held-out split.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{reports_to_csv, run_benchmark, EvalMode, MetricsReport, NetSet};
use crate::fcn::{save_checkpoint, Checkpoint};
use crate::scenes::{Dataset, Level};
use crate::train::{train_role, Role, TrainConfig, TrainLog};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub size: usize,
    pub level: Level,
    /// Each seed fixes both the generated scene set and the net initialization.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_samples: 800,
            test_samples: 200,
            size: 64,
            level: Level::SolidLiquid,
            seeds: vec![0, 1, 2],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    /// Reports in [`EvalMode::ALL`] order.
    pub reports: Vec<MetricsReport>,
    pub logs: Vec<(Role, TrainLog)>,
    pub checkpoints: Vec<(Role, Checkpoint)>,
}

impl SeedRun {
    pub fn report(&self, mode: EvalMode) -> &MetricsReport {
        self.reports
            .iter()
            .find(|r| r.mode == mode)
            .expect("every mode evaluated")
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
}

impl ExperimentResult {
    /// Mean over seeds of the content-class mean IoU (undefined counts as 0).
    pub fn mean_content_iou(&self, mode: EvalMode) -> f64 {
        let sum: f64 = self
            .runs
            .iter()
            .map(|r| r.report(mode).content_mean_iou.unwrap_or(0.0))
            .sum();
        sum / self.runs.len().max(1) as f64
    }

    /// `seed,mode,mean_iou,content_mean_iou,background_iou` per run, then a
    /// `mean` row per mode.
    pub fn summary_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("seed,mode,mean_iou,content_mean_iou,background_iou\n");
        for run in &self.runs {
            for r in &run.reports {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    run.seed,
                    r.mode,
                    fmt(r.mean_iou),
                    fmt(r.content_mean_iou),
                    fmt(r.rows[0].iou)
                );
            }
        }
        for mode in EvalMode::ALL {
            let _ = writeln!(out, "mean,{mode},,{:.6},", self.mean_content_iou(mode));
        }
        out
    }

    /// Writes per-seed report CSVs and tables, training logs, checkpoints and
    /// the summary under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: String, text: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        for run in &self.runs {
            let s = run.seed;
            write(format!("seed{s}_iou.csv"), reports_to_csv(&run.reports))?;
            let tables: Vec<String> = run.reports.iter().map(MetricsReport::to_table).collect();
            write(format!("seed{s}_iou.txt"), tables.join("\n"))?;
            for (role, log) in &run.logs {
                write(format!("seed{s}_{role}_train.csv"), log.to_csv())?;
            }
            for (role, ckpt) in &run.checkpoints {
                save_checkpoint(ckpt, dir.join(format!("seed{s}_{role}.vnet")))?;
            }
        }
        write("summary.csv".into(), self.summary_csv())
    }
}

/// Trains and evaluates one seed. `progress` receives one line per stage.
pub fn run_seed(config: &ExperimentConfig, seed: u64, progress: &mut dyn FnMut(&str)) -> Result<SeedRun> {
    let data = Dataset::generate(config.train_samples + config.test_samples, config.size, seed)?;
    let (train, test) = data.split_at(config.train_samples);
    let tc = TrainConfig {
        seed,
        level: config.level,
        ..config.train.clone()
    };
    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    for role in [Role::Single, Role::Vessel, Role::Content] {
        progress(&format!("seed {seed}: training {role} net ({} steps)", tc.steps));
        let out = train_role(role, config.level, &train, Some(&test), &tc)?;
        logs.push((role, out.log));
        checkpoints.push((role, out.checkpoint));
    }
    let net = |role| {
        checkpoints
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, c): &(Role, Checkpoint)| c.network.clone())
    };
    let nets = NetSet {
        single: net(Role::Single),
        vessel: net(Role::Vessel),
        content: net(Role::Content),
    };
    let reports = EvalMode::ALL
        .into_iter()
        .map(|mode| run_benchmark(&test, config.level, mode, &nets, seed))
        .collect::<Result<Vec<_>>>()?;
    for r in &reports {
        progress(&format!(
            "seed {seed}: {} content mean IoU {:.4}",
            r.mode,
            r.content_mean_iou.unwrap_or(0.0)
        ));
    }
    Ok(SeedRun {
        seed,
        reports,
        logs,
        checkpoints,
    })
}

pub fn run_experiment(config: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentResult> {
    if config.level == Level::Vessel {
        return Err(Error::InvalidArgument(
            "the comparison needs a content level above 1".into(),
        ));
    }
    if config.seeds.is_empty() || config.train_samples == 0 || config.test_samples == 0 {
        return Err(Error::InvalidArgument(
            "need at least one seed, training and test sample".into(),
        ));
    }
    let runs = config
        .seeds
        .iter()
        .map(|&seed| run_seed(config, seed, progress))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: config.clone(),
        runs,
    })
}
