//! `irb`: train, evaluate, ablate and visualize the IRB scene classifier.

mod commands;
mod config;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use irb_core::{AlignmentMode, AttentionActivation, Variant};
use serde::de::DeserializeOwned;

use crate::config::{ConfigFile, Preset, Settings};

#[derive(Debug, Parser)]
#[command(name = "irb", version, about = "Instance representation bank scene classifier")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// "synthetic" or an image folder with one subdirectory per class.
    #[arg(long, global = true)]
    data: Option<String>,
    /// Fraction of each class used for training.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true, value_parser = parse_lower::<AlignmentMode>)]
    alignment_mode: Option<AlignmentMode>,
    #[arg(long, global = true, value_parser = parse_lower::<AttentionActivation>)]
    attention_activation: Option<AttentionActivation>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run of the configured variant and save a checkpoint.
    Train {
        /// Protocol run index selecting the split and init seeds.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Evaluate a checkpoint on the test split of a run.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Run the repeated-split protocol for all seven variants.
    Ablate,
    /// Export descriptor heatmaps of test images for a checkpoint.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Indices into the test split.
        #[arg(long = "sample", default_value = "0")]
        samples: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Write the synthetic dataset as PNG class folders with a manifest.
    GenData,
}

fn parse_lower<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn settings(common: &Common, checkpoint: Option<&PathBuf>) -> anyhow::Result<Settings> {
    let mut file = ConfigFile::default();
    let sibling = checkpoint.and_then(|c| c.parent()).map(|d| d.join("config.toml"));
    if let Some(path) = common.config.as_ref().or(sibling.as_ref().filter(|p| p.is_file())) {
        file = ConfigFile::read(path)?;
    }
    let flags = ConfigFile {
        preset: common.preset,
        seed: common.seed,
        variant: common.variant,
        data: common.data.clone(),
        train_ratio: common.ratio,
        runs: common.runs,
        epochs: common.epochs,
        alpha: common.alpha,
        alignment_mode: common.alignment_mode,
        attention_activation: common.attention_activation,
        ..ConfigFile::default()
    };
    Settings::resolve(&file.merge(flags))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let checkpoint = match &cli.command {
        Command::Eval { checkpoint, .. } | Command::Visualize { checkpoint, .. } => Some(checkpoint),
        _ => None,
    };
    let settings = settings(&cli.common, checkpoint).map_err(Failure::Usage)?;
    let out = &cli.common.out;
    match cli.command {
        Command::Train { run } => commands::train(settings, run, out),
        Command::Eval { checkpoint, run } => commands::eval(settings, &checkpoint, run, out),
        Command::Ablate => commands::ablate(settings, out),
        Command::Visualize {
            checkpoint,
            samples,
            run,
        } => commands::visualize(settings, &checkpoint, &samples, run, out),
        Command::GenData => commands::gen_data(settings, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
