//! `subforest`: generate data, train and evaluate forests, run sweeps and
//! evaluate the median-forest risk bound from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "subforest", version, about = "Random and median forests with reproducible experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed. Mandatory for randomized subcommands when `CI` is set.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file; a `<out>.manifest` is written beside it. Stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a synthetic dataset from one of the eight benchmark models.
    Generate(GenerateArgs),
    /// Train a forest on a CSV dataset.
    Train(TrainArgs),
    /// Predict every row of a CSV dataset.
    Predict(EvalArgs),
    /// Empirical L2 risk of a forest on a CSV dataset.
    Risk(EvalArgs),
    /// Sweep the leaf budget or the subsample size against the default forest.
    Sweep(SweepArgs),
    /// Near-optimal parameter of a sweep CSV.
    Optimal(OptimalArgs),
    /// Risk bound of median forests over the depth.
    Bound(BoundArgs),
    /// Monte-Carlo check of the cell side-length moment bound.
    VerifyLemma(LemmaArgs),
    /// Median-forest convergence rate in dimension one.
    RateStudy(RateArgs),
}

#[derive(Args, Debug, Default)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: Option<u32>,
    /// Sample size; the model's default when absent.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// `variance` or `sd`.
    #[arg(long)]
    pub noise_interpretation: Option<String>,
    /// Also split: `--out` receives the training part.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `cart` or `median`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// `bootstrap`, `subsample` or `none`.
    #[arg(long)]
    pub resample: Option<String>,
    /// Subsample size `a_n` (with `--resample subsample`).
    #[arg(long)]
    pub sampsize: Option<usize>,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long)]
    pub nodesize: Option<usize>,
    #[arg(long)]
    pub maxnodes: Option<usize>,
    /// Median tree depth.
    #[arg(long)]
    pub depth: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub forest: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: Option<u32>,
    #[arg(long)]
    pub n: Option<usize>,
    /// `maxnodes` or `sampsize`.
    #[arg(long)]
    pub param: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Explicit grid values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Grid as fractions of the training size.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub noise_interpretation: Option<String>,
    /// Run one sweep per sample size and write the optimum/n summary.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct OptimalArgs {
    /// Sweep CSV written by `sweep`.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct BoundArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long = "L")]
    pub lipschitz: Option<f64>,
    /// Largest depth tabulated.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Dimension factor of the approximation term: `d` or `d3/2`.
    #[arg(long)]
    pub weight: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct LemmaArgs {
    #[arg(long = "d", value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long = "k", value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    /// Fixed subsample size; `2^(k+6)` per depth when absent.
    #[arg(long)]
    pub a_n: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// `centre` or `random-path`.
    #[arg(long)]
    pub cell: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct RateArgs {
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long = "L")]
    pub lipschitz: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub test_points: Option<usize>,
    /// Subsample size as a fraction of n; no subsampling when absent.
    #[arg(long)]
    pub subsample_fraction: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
