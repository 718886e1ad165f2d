//! Repeated-split evaluation protocol and the ablation matrix.
//!
//! Run `r` of a protocol splits with seed `base + r` and initialises the
//! network with seed `base + 1000 + r`, so every variant of an ablation sees
//! the same splits for the same run index.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, DatasetSplit, SceneSample};
use crate::error::{Error, Result};
use crate::model::{Model, Variant};
use crate::train::{evaluate, train, EpochRecord, RunReport, TrainConfig};

pub fn split_seed(base: u64, run: usize) -> u64 {
    base + run as u64
}

pub fn init_seed(base: u64, run: usize) -> u64 {
    base + 1000 + run as u64
}

/// FNV-1a over the newline-joined ids, identifying a split's membership.
pub fn ids_digest<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for id in ids {
        for b in id.bytes().chain(std::iter::once(b'\n')) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub variant: Variant,
    pub run: usize,
    pub split_seed: u64,
    pub init_seed: u64,
    pub split_digest: String,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub variant: Variant,
    pub runs: Vec<RunOutcome>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl ProtocolResult {
    fn from_runs(variant: Variant, runs: Vec<RunOutcome>) -> Self {
        let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&accs);
        Self {
            variant,
            runs,
            mean,
            std,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }

    /// `mean±std` in percent.
    pub fn summary(&self) -> String {
        format_mean_std(self.mean, self.std)
    }
}

/// Sample mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Formats fractional accuracies as `"91.00±1.00"`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

/// A trained model with its run record, test evaluation and split.
pub struct FittedRun {
    pub model: Model,
    pub report: RunReport,
    pub split: DatasetSplit,
    pub outcome: RunOutcome,
}

/// Splits, trains and evaluates run `run` of the protocol, keeping the model.
pub fn fit_run(config: &TrainConfig, samples: &[SceneSample], run: usize) -> Result<FittedRun> {
    let split = stratified_split(samples, config.train_ratio, split_seed(config.seed, run))?;
    let seed = init_seed(config.seed, run);
    let run_cfg = TrainConfig { seed, ..config.clone() };
    let (model, mut report) = train(&run_cfg, &split.train, seed)?;
    let ev = evaluate(&model, &split.test)?;
    report.test = Some(ev.clone());
    let outcome = RunOutcome {
        variant: config.variant,
        run,
        split_seed: split.seed,
        init_seed: seed,
        split_digest: ids_digest(split.train.iter().map(|s| s.id.as_str())),
        accuracy: ev.accuracy,
        confusion: ev.confusion,
        epochs: report.epochs.clone(),
    };
    Ok(FittedRun {
        model,
        report,
        split,
        outcome,
    })
}

/// Trains and evaluates one run of the protocol.
pub fn run_once(config: &TrainConfig, samples: &[SceneSample], run: usize) -> Result<RunOutcome> {
    fit_run(config, samples, run).map(|f| f.outcome)
}

/// `runs` independent train/test repetitions of `config.variant`.
pub fn run_protocol(config: &TrainConfig, samples: &[SceneSample], runs: usize) -> Result<ProtocolResult> {
    if runs == 0 {
        return Err(Error::InvalidArgument("protocol needs at least one run".into()));
    }
    let outcomes = (0..runs)
        .into_par_iter()
        .map(|r| run_once(config, samples, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolResult::from_runs(config.variant, outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub train_ratio: f64,
    pub rows: Vec<ProtocolResult>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&ProtocolResult> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = format!("{:.0}%", 100.0 * self.train_ratio);
        let mut out = String::new();
        writeln!(out, "{:<16} {:>14}", "", head)?;
        for r in &self.rows {
            writeln!(out, "{:<16} {:>14}", r.variant.label(), r.summary())?;
        }
        writeln!(
            out,
            "(accuracy % as mean±population std over {} runs)",
            self.rows.first().map_or(0, |r| r.runs.len())
        )?;
        f.write_str(&out)
    }
}

/// Runs the protocol for all seven variants with shared split seeds.
pub fn ablate(config: &TrainConfig, samples: &[SceneSample]) -> Result<AblationTable> {
    let jobs: Vec<(Variant, usize)> = Variant::ALL
        .iter()
        .flat_map(|&v| (0..config.runs).map(move |r| (v, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(variant, r)| {
            let cfg = TrainConfig {
                variant,
                ..config.clone()
            };
            run_once(&cfg, samples, r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    let mut it = outcomes.into_iter();
    for v in Variant::ALL {
        let runs: Vec<RunOutcome> = it.by_ref().take(config.runs).collect();
        rows.push(ProtocolResult::from_runs(v, runs));
    }
    Ok(AblationTable {
        train_ratio: config.train_ratio,
        rows,
    })
}
