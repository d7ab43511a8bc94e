//! `vpgmm`: data generation, private and centralized fits, parameter
//! comparison and private forecasting from the command line.
//!
//! Exit codes: 0 success, 1 comparison outside tolerance, 2 invalid input,
//! 3 numerical degeneracy, 4 I/O failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Input the user can fix: bad flags, files or indices.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(name = "vpgmm", version, about = "Privacy-preserving mixture fitting for vertically partitioned wind-farm data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides for values that can also come from `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory with wf_<m>.csv and manifest.json [default: config, then $VPGMM_DATA_DIR, then ./data]
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Mixture components J.
    #[arg(long, global = true)]
    pub components: Option<usize>,
    /// Relative log-likelihood tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// exact or paper-literal.
    #[arg(long, global = true)]
    pub mean_mode: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic per-farm CSV files and a manifest.
    GenData(GenDataArgs),
    /// Fit the mixture with the private protocol (or centrally).
    Fit(FitArgs),
    /// Compare two parameter files component by component.
    Compare(CompareArgs),
    /// Build predictive mixtures for target farms.
    Forecast(ForecastArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub farms: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub obs: Option<usize>,
    /// Comma-separated capacities in MW, one per farm.
    #[arg(long, value_delimiter = ',')]
    pub capacities: Option<Vec<f64>>,
    #[arg(long)]
    pub rho_t: Option<f64>,
    #[arg(long)]
    pub rho_s: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Output directory [default: the data directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit on the pooled data instead of running the protocol.
    #[arg(long)]
    pub centralized: bool,
    /// Center covariance updates on the new mean.
    #[arg(long)]
    pub use_updated_mean: bool,
    /// Write the full message transcript here.
    #[arg(long, conflicts_with_all = ["replay", "centralized"])]
    pub record: Option<PathBuf>,
    /// Rerun and require a byte-identical transcript to this file.
    #[arg(long, conflicts_with = "centralized")]
    pub replay: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub rtol: f64,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    /// Parameter file [default: <data-dir>/params.txt].
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Current period, 1-based.
    #[arg(long)]
    pub v0: usize,
    /// Targets as `m` (period v0+1) or `m:t`, comma-separated [default: every farm at v0+1].
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Current outputs of all farms, comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "row")]
    pub current: Option<Vec<f64>>,
    /// Take current outputs from this observation, 1-based [default: the last].
    #[arg(long)]
    pub row: Option<usize>,
    /// Also write the pooled-data conditional and report the difference.
    #[arg(long)]
    pub oracle: bool,
    /// Output directory [default: the data directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<vpgmm::Error>() {
            return match e.root() {
                vpgmm::Error::Io(_) => 4,
                e if e.is_numerical() => 3,
                _ => 2,
            };
        }
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(err) => {
            // Library errors already embed their source in the message.
            let mut msg = err.to_string();
            for cause in err.chain().skip(1) {
                let text = cause.to_string();
                if !msg.ends_with(&text) {
                    msg = format!("{msg}: {text}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&err))
        }
    }
}
