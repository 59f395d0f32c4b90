use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "clan-forge", version, about = "Category-level adversarial domain adaptation on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic source/target dataset.
    GenData(GenDataArgs),
    /// Train one model and write its record, checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out target split.
    Eval(EvalArgs),
    /// Plot cluster-center distances from one or more run records.
    Ccd(CcdArgs),
    /// Train over a grid of lambda_local / epsilon values.
    Sweep(SweepArgs),
    /// Compare every differentiable op against finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    SourceOnly,
    Tan,
    Clan,
}

impl MethodArg {
    pub fn name(self) -> &'static str {
        match self {
            MethodArg::SourceOnly => "source-only",
            MethodArg::Tan => "tan",
            MethodArg::Clan => "clan",
        }
    }
}

/// Flags that override entries of the training config.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// JSON or TOML config file; flags take precedence over its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_local: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_adv: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_weight: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Config file whose `data` section describes the dataset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Dataset directory from `gen-data`; generated in memory when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Config used for the dataset when `--data` is absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Decides whether both classifier heads are ensembled.
    #[arg(long, value_enum, default_value = "clan")]
    pub method: MethodArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CcdArgs {
    /// `run.jsonl` files written by `train`.
    #[arg(long = "run", required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Classes to plot; all classes when absent.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Grid {
    /// Epsilon in {0.1, 0.2, 0.4, 0.8} at lambda_local 40, then
    /// lambda_local in {10, 20, 40, 80} at epsilon 0.4.
    Paper,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum, default_value = "paper")]
    pub grid: Grid,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Also write the report as JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Negate the backward pass of one op (self-test of the checker).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}
