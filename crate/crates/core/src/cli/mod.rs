//! Command-line front end. Every command reads files, runs a deterministic
//! pipeline and writes plot-ready CSV/JSON into `--out-dir`.

mod commands;
mod load;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dynamics::{SmoothingMode, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pipeline::Strategy;

#[derive(Debug, Parser)]
#[command(name = "sampleinfo", version, about = "Per-sample information scores for linearized networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every training sample.
    Score(ScoreArgs),
    /// Remove samples by score and track validation accuracy.
    Summarize(SummarizeArgs),
    /// Flag likely mislabeled samples.
    Detect(DetectArgs),
    /// Per-group score statistics.
    Compare(CompareArgs),
    /// Monte-Carlo unique information on the 2-D toy problem.
    Toy(ToyArgs),
    /// Write a synthetic benchmark dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Fsi,
    Si,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SmoothingArg {
    Identity,
    IsotropicSgd,
    Lyapunov,
    Fisher,
}

impl From<SmoothingArg> for SmoothingMode {
    fn from(s: SmoothingArg) -> Self {
        match s {
            SmoothingArg::Identity => SmoothingMode::Identity,
            SmoothingArg::IsotropicSgd => SmoothingMode::IsotropicSgd,
            SmoothingArg::Lyapunov => SmoothingMode::Lyapunov,
            SmoothingArg::Fisher => SmoothingMode::Fisher,
        }
    }
}

fn parse_time(s: &str) -> std::result::Result<f64, String> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        other => match other.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
            _ => Err(format!("'{s}' is not a nonnegative time or 'inf'")),
        },
    }
}

/// Inputs and training configuration shared by the scoring commands.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Training set CSV (columns x0.., y, optional group).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Validation set CSV; the training inputs are used when absent.
    #[arg(long)]
    pub val_dataset: Option<PathBuf>,
    /// Precomputed training Jacobians (JLF).
    #[arg(long, conflicts_with = "model")]
    pub jacobians: Option<PathBuf>,
    /// Precomputed validation Jacobians (JLF).
    #[arg(long, requires = "jacobians")]
    pub val_jacobians: Option<PathBuf>,
    /// Model to linearize: `linear:IN:OUT` or `mlp:IN:HIDDEN:OUT`.
    #[arg(long)]
    pub model: Option<ModelSpec>,
    /// Number of classes (default: largest label + 1).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    /// Training time, or `inf` for the steady state.
    #[arg(long, default_value = "2000", value_parser = parse_time)]
    pub time: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Jacobian coordinates kept per layer.
    #[arg(long)]
    pub d0: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = MeasureArg::Fsi)]
    pub measure: MeasureArg,
    /// Smoothing covariance for `--measure si`.
    #[arg(long, value_enum, default_value_t = SmoothingArg::Identity)]
    pub smoothing: SmoothingArg,
    /// SGD batch size entering the SGD-based smoothing covariances.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

impl CommonArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            time: self.time,
            lambda: self.lambda,
            batch: self.batch,
            sigma: self.sigma,
            smoothing: self.smoothing.into(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of histogram bins.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Strategy::Bottom, Strategy::Top, Strategy::Random, Strategy::BottomIterative])]
    pub strategy: Vec<Strategy>,
    /// Largest fraction of the training set to remove.
    #[arg(long, default_value_t = 0.9)]
    pub fraction: f64,
    /// Ratio increment, and the per-round removal of the iterative strategy.
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Flip this fraction of training labels before scoring (synthetic mode).
    #[arg(long, conflicts_with = "mask")]
    pub noise_rate: Option<f64>,
    /// File with one 0/1 per training sample marking known flipped labels.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Flag samples scoring above this value (audit mode).
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ToySampleArg {
    Extreme,
    Typical,
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub runs: usize,
    #[arg(long, default_value_t = 20)]
    pub resamples: usize,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, value_enum, default_value_t = ToySampleArg::Extreme)]
    pub sample: ToySampleArg,
    /// Remove this training index instead of a chosen one.
    #[arg(long, conflicts_with = "sample")]
    pub index: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Two classes, each a mixture of Gaussian modes.
    Mixture,
    /// One rare and one common sub-class sharing a label.
    Subclass,
    /// A duplicated easy source next to a high-variance hard source.
    Sources,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    /// Training samples (per sub-class sizes for `subclass` are scaled to it).
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a validation set drawn from the same clusters.
    #[arg(long)]
    pub val_out: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub val_n: usize,
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be ≥ 1".into()));
        }
        // A pool may already exist when called twice in one process; the
        // thread count never changes results, so that is not an error.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score(a) => {
            init_threads(a.common.threads)?;
            commands::score(&a)
        }
        Command::Summarize(a) => {
            init_threads(a.common.threads)?;
            commands::summarize(&a)
        }
        Command::Detect(a) => {
            init_threads(a.common.threads)?;
            commands::detect(&a)
        }
        Command::Compare(a) => {
            init_threads(a.common.threads)?;
            commands::compare(&a)
        }
        Command::Toy(a) => {
            init_threads(a.threads)?;
            commands::toy(&a)
        }
        Command::Synth(a) => commands::synth(&a),
    }
}

/// Exit status for an error: 3 for numerical failures, 2 for bad input.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}
