use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metagam_core::PoolMethod;

/// Fit, strip and pool generalized additive models across cohorts.
#[derive(Debug, Parser)]
#[command(name = "metagam", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to one cohort's CSV data and write the full local model.
    Fit(FitArgs),
    /// Remove individual-level data from a fitted model for sharing.
    Strip(StripArgs),
    /// Pool a term across stripped cohort models.
    Meta(MetaArgs),
    /// Run the estimation and power simulation experiments.
    Simulate(SimulateArgs),
    /// Plot each cohort's term curve with its confidence band.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Cohort data as CSV with a header row.
    pub data: PathBuf,
    /// Model formula, e.g. "y ~ s(x, k=10) + s(x, by=z) + g + (1|id)".
    #[arg(long)]
    pub formula: String,
    /// Output path of the full model.
    #[arg(long)]
    pub out: PathBuf,
    /// Cohort label stored in the model; defaults to the data file stem.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct StripArgs {
    /// Full model written by `fit`.
    pub model: PathBuf,
    /// Output path; defaults to the model path with a `.metagam.json` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Fe,
    Dl,
}

impl From<MethodArg> for PoolMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fe => PoolMethod::FixedEffect,
            MethodArg::Dl => PoolMethod::DerSimonianLaird,
        }
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Prediction grid, e.g. "Age=20:90:0.1,PSQI=1,Sex=Female".
    #[arg(long)]
    pub grid: String,
    /// Term to predict, e.g. "s(Age)" or "s(Age):PSQI".
    #[arg(long)]
    pub term: String,
    /// Add the intercept to each cohort's term before pooling or plotting.
    #[arg(long)]
    pub intercept: bool,
    /// Confidence level is 1 - alpha.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct MetaArgs {
    /// Stripped cohort models (`.metagam.json`).
    #[arg(required = true, num_args = 2..)]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Dl)]
    pub method: MethodArg,
    /// Use each cohort only within its observed covariate range.
    #[arg(long)]
    pub range_restrict: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment file (TOML or JSON). Without it both experiments run with
    /// default settings.
    pub config: Option<PathBuf>,
    /// Override the master seed of every experiment.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Stripped cohort models (`.metagam.json`).
    #[arg(required = true)]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Output SVG path.
    #[arg(long)]
    pub out: PathBuf,
}
