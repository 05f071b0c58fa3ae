//! `fdgp` command line: calibrate deterministic speed-density models, fit
//! exact and sparse GP regressions, predict, evaluate, sample inducing
//! sets, and run experiment sweeps that emit plot-ready CSV data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod util;


#[derive(Parser)]
#[command(
    name = "fdgp",
    version,
    about = "Stochastic fundamental diagrams: deterministic calibration plus exact and sparse GP regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Density-speed CSV (header row required)
    #[arg(long, env = "FD_SGPR_DATA")]
    data: std::path::PathBuf,
    /// Density column name
    #[arg(long, default_value = "density")]
    density_col: String,
    /// Speed column name
    #[arg(long, default_value = "speed")]
    speed_col: String,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model name from the registry, or "all"
    #[arg(long, default_value = "all")]
    model: String,
    /// Weight observations by inverse density-bin occupancy
    #[arg(long)]
    weighted: bool,
    /// Number of density bins for the weights
    #[arg(long, default_value_t = fdgp::dataset::DEFAULT_WEIGHT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (report CSV + one model document per fit)
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct FitGpArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Kernel kind: exp, rbf, matern32, matern52, rq
    #[arg(long, default_value = "exp")]
    kernel: String,
    /// Prior mean model name ("none" for a zero mean); calibrated on the
    /// data before fitting
    #[arg(long, default_value = "none")]
    prior: String,
    /// Load the prior from a model document instead of calibrating
    #[arg(long)]
    prior_file: Option<std::path::PathBuf>,
    /// Hyperparameter search budget (objective evaluations)
    #[arg(long, default_value_t = 200)]
    budget: usize,
    /// Query grid "start:stop:step" in veh/mi
    #[arg(long, default_value = "0:120:1")]
    queries: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct FitSgprArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Prior mean model name or "none"
    #[arg(long, default_value = "none")]
    prior: String,
    /// Load the prior from a model document instead of calibrating
    #[arg(long)]
    prior_file: Option<std::path::PathBuf>,
    /// Sampler: rs, ss, cs, wrs
    #[arg(long, default_value = "rs")]
    sampler: String,
    /// Inducing set size
    #[arg(long, default_value_t = 288)]
    m: usize,
    #[arg(long, default_value = "exp")]
    kernel: String,
    /// Hyperparameter search budget (bound evaluations)
    #[arg(long, default_value_t = 100)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Density bins for weighted sampling / weighted calibration
    #[arg(long, default_value_t = fdgp::dataset::DEFAULT_WEIGHT_BINS)]
    bins: usize,
    /// Also write a posterior CSV over this grid
    #[arg(long)]
    queries: Option<String>,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Sparse fit document produced by fit-sgpr
    #[arg(long)]
    fit: std::path::PathBuf,
    /// Query grid "start:stop:step" in veh/mi
    #[arg(long)]
    queries: String,
    /// Also emit a (density, speed, probability-density) surface grid
    #[arg(long)]
    surface: bool,
    /// Speed-axis points per density slice of the surface
    #[arg(long, default_value_t = 101)]
    z_points: usize,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    fit: std::path::PathBuf,
    /// Coverage level for the predictive interval
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Append the metric row to this CSV
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    sampler: String,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = fdgp::dataset::DEFAULT_WEIGHT_BINS)]
    bins: usize,
    /// k-means iteration cap (cluster sampler)
    #[arg(long, default_value_t = fdgp::sampling::DEFAULT_CLUSTER_ITERS)]
    max_iters: usize,
    /// Output CSV of selected row indices
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated prior list ("none" for pure GP)
    #[arg(long, default_value = "none")]
    priors: String,
    /// Comma-separated sampler list (rs,ss,cs,wrs)
    #[arg(long, default_value = "rs")]
    samplers: String,
    /// Comma-separated inducing sizes
    #[arg(long, default_value = "288")]
    m: String,
    #[arg(long, default_value = "exp")]
    kernel: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hyperparameter search budget per cell
    #[arg(long, default_value_t = 100)]
    budget: usize,
    /// Concurrent cells
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = fdgp::dataset::DEFAULT_WEIGHT_BINS)]
    bins: usize,
    /// Hyperparameter handling: "per-cell" optimizes every cell, "shared"
    /// optimizes once per prior and reuses the result
    #[arg(long, default_value = "per-cell")]
    hypers: String,
    /// Fraction held out for evaluation (0 evaluates on the training data)
    #[arg(long, default_value_t = 0.0)]
    holdout: f64,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate deterministic speed-density models by weighted least squares
    Calibrate(CalibrateArgs),
    /// Fit an exact GP and export its posterior over a density grid
    FitGp(FitGpArgs),
    /// Fit a sparse variational GP and save the fit document
    FitSgpr(FitSgprArgs),
    /// Predict from a saved sparse fit (bands and optional 3-D surface data)
    Predict(PredictArgs),
    /// Score a saved fit against a dataset (RMSE / MAPE / PWCI)
    Evaluate(EvaluateArgs),
    /// Draw an inducing sample and export its index list
    Sample(SampleArgs),
    /// Run a (prior x sampler x m) experiment grid and emit result CSVs
    Sweep(SweepArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Calibrate(args) => commands::calibrate(args),
        Command::FitGp(args) => commands::fit_gp(args),
        Command::FitSgpr(args) => commands::fit_sgpr(args),
        Command::Predict(args) => commands::predict(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Sample(args) => commands::sample(args),
        Command::Sweep(args) => commands::sweep(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
