//! Command-line drivers for simulation, blind reconstruction and resolution
//! read-out.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use simrecon_core::sims::KernelMode;
use simrecon_core::Error;

pub use config::{Pipeline, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "simrecon", version, about = "Blind structured-illumination reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a phantom, pattern stack and measurement stack.
    Simulate(RunArgs),
    /// Estimate patterns and reconstruct a super-resolved image.
    Reconstruct(ReconstructArgs),
    /// Estimate illumination patterns only.
    EstimatePatterns(InputArgs),
    /// Write the star MTF curve of an image as CSV.
    Mtf(MtfArgs),
    /// Tabulate resolution and enhancement for several images.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum)]
    pub pipeline: Option<Pipeline>,
    #[arg(long, value_enum)]
    pub kernel_mode: Option<KernelModeArg>,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Measurement stack file.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Use this pattern stack instead of estimating patterns.
    #[arg(long)]
    pub ground_truth_patterns: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MtfArgs {
    /// Image file.
    #[arg(long)]
    pub input: PathBuf,
    /// Manifest with the star geometry; defaults to manifest.json beside the input.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// CSV output; defaults to `<input stem>_mtf.csv` beside the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Image files; the first one is the enhancement reference.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Optional CSV copy of the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KernelModeArg {
    Analytic,
    Empirical,
}

impl From<KernelModeArg> for KernelMode {
    fn from(k: KernelModeArg) -> Self {
        match k {
            KernelModeArg::Analytic => KernelMode::Analytic,
            KernelModeArg::Empirical => KernelMode::Empirical,
        }
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_) | Error::Format(_)) => EXIT_IO,
        Some(Error::Divergence { .. } | Error::IllPosed(_) | Error::OutOfRange { .. } | Error::Profile(_)) => {
            EXIT_NUMERICAL
        }
        Some(_) => EXIT_CONFIG,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_CONFIG,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::EstimatePatterns(a) => commands::estimate_patterns(&a),
        Command::Mtf(a) => commands::mtf(&a),
        Command::Compare(a) => commands::compare(&a),
    }
}
