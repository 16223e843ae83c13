//! `sncv`: fit, sample, simulate and cluster with the skew normal MPLE.
//!
//! Exit status is 0 on success, 2 for usage and input errors and 3 when a
//! fit fails numerically. The default seed can be set through `SNCV_SEED`.

mod commands;
mod input;
mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use sn_mple::estimation::PenaltySpec;
use sn_mple::pipeline::Layout;
use sn_mple::sim::Method;

#[derive(Debug, Parser)]
#[command(
    name = "sncv",
    version,
    about = "Cross-validated penalised likelihood for the skew normal model"
)]
pub struct Cli {
    /// Master seed for folds, sampling, replicates and k-means.
    #[arg(long, global = true, env = "SNCV_SEED", default_value_t = 1)]
    pub seed: u64,

    /// Run every task on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one sample and report the estimates.
    Fit(FitArgs),
    /// Draw a sample from the model, one value per line.
    Sample(SampleArgs),
    /// Run a simulation preset or a JSON configuration.
    Simulate(SimulateArgs),
    /// Fit every series of a table and cluster the fitted parameters.
    Cluster(ClusterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// `key=value` lines.
    Kv,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(name = "cv_mple", alias = "cv-mple")]
    CvMple,
    #[value(name = "q_mple", alias = "q-mple")]
    QMple,
    Mle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::CvMple => Method::CvMple,
            MethodArg::QMple => Method::QMple,
            MethodArg::Mle => Method::Mle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Wide,
    Long,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Wide => Layout::Wide,
            LayoutArg::Long => Layout::Long,
        }
    }
}

/// Estimation settings shared by `fit` and `cluster`.
#[derive(Debug, Clone, Args)]
pub struct EstimationArgs {
    #[arg(long, value_enum, default_value = "cv_mple")]
    pub method: MethodArg,

    /// Number of cross-validation folds.
    #[arg(long = "K", visible_alias = "folds", default_value_t = 10)]
    pub folds: usize,

    /// Largest penalty on the grid is omega0 * n.
    #[arg(long, default_value_t = 0.05)]
    pub omega0: f64,

    /// Number of grid points, including zero.
    #[arg(long, default_value_t = 40)]
    pub grid_size: usize,

    /// Penalty used by cv_mple: hyperbolic, ridge or log-cauchy[:c2].
    #[arg(long, default_value = "hyperbolic", value_parser = parse_penalty)]
    pub penalty: PenaltySpec,

    /// Relative change in the objective that stops the EM iteration.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,

    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

fn parse_penalty(s: &str) -> Result<PenaltySpec, String> {
    s.parse::<PenaltySpec>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// File with the observations (`-` for stdin); separators are commas,
    /// semicolons or whitespace, `#` starts a comment line.
    #[arg(long, short, conflicts_with = "data", required_unless_present = "data")]
    pub input: Option<PathBuf>,

    /// Inline observations, e.g. `--data 1.2,0.4,3.1,2.2`.
    #[arg(long, allow_hyphen_values = true)]
    pub data: Option<String>,

    #[command(flatten)]
    pub est: EstimationArgs,

    #[arg(long, value_enum, default_value = "kv")]
    pub format: Format,

    /// Write the report here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, short)]
    pub n: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// setting1, setting2 or setting2-small.
    #[arg(conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,

    /// JSON file with `setting` plus any simulation fields to override.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Multiply sample sizes and replicate counts by this factor.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,

    /// Override the replicate count (applied after scaling).
    #[arg(long)]
    pub replicates: Option<usize>,

    /// Directory for records.csv and summary.csv; without it the summary
    /// goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Add a wall-clock runtime column to the records.
    #[arg(long)]
    pub runtime: bool,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Comma-separated table with a header row (`-` for stdin).
    #[arg(long, short)]
    pub input: PathBuf,

    #[arg(long, value_enum, default_value = "wide")]
    pub layout: LayoutArg,

    /// Number of clusters.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,

    #[arg(long = "kmeans-iter", default_value_t = 100)]
    pub kmeans_iter: usize,

    /// Series with |alpha| above this count as skewed.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub threshold: f64,

    #[command(flatten)]
    pub est: EstimationArgs,

    /// Directory for fits.csv and clusters.txt; without it both go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sncv: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
