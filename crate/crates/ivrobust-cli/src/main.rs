//! `ivrobust` command line: estimate, psiv, bootstrap, simulate.

mod output;
mod run;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit code for data / specification / configuration errors.
const EXIT_INPUT: u8 = 2;
/// Exit code for numerical failures on valid input.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ivrobust",
    version,
    about = "2SLS / linear GMM estimation with multiple-LATEs-robust inference",
    after_help = "Thread count can be pinned with the IVROBUST_THREADS environment variable."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit 2SLS and report conventional and robust standard errors with
    /// diagnostics.
    Estimate(EstimateArgs),
    /// Propensity-score IV: logit first stage with a two-step variance.
    Psiv(PsivArgs),
    /// Percentile-t bootstrap critical values and confidence intervals.
    Bootstrap(BootstrapArgs),
    /// Draw synthetic samples and run the Monte Carlo harness.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Path to a headered CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Outcome column.
    #[arg(long)]
    outcome: String,
    /// Endogenous column(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    endogenous: Vec<String>,
    /// Excluded instrument column(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    instruments: Vec<String>,
    /// Exogenous covariate column(s), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "")]
    covariates: Vec<String>,
    /// Cluster id column.
    #[arg(long)]
    cluster: Option<String>,
    /// Suppress the synthetic constant.
    #[arg(long)]
    no_constant: bool,
    /// Field delimiter.
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// Token treated as missing; rows containing it are dropped.
    #[arg(long, default_value = "NA")]
    na: String,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Text,
    Json,
    /// Replicate-level rows on stdout; only valid for `simulate`.
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Vce {
    /// Conventional and multiple-LATEs-robust, side by side.
    Both,
    C,
    Mr,
    /// Cluster-and-multiple-LATEs-robust (requires --cluster).
    ClusterMr,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Variance flavor(s) to report.
    #[arg(long, value_enum, default_value = "both")]
    vce: Vce,
    /// Disable the cluster finite-sample correction factor.
    #[arg(long)]
    no_cluster_correction: bool,
    /// Use the uncentered moment variance in the J test.
    #[arg(long)]
    uncentered_j: bool,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct PsivArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Coefficient to bootstrap, by column name; defaults to the first
    /// endogenous variable.
    #[arg(long)]
    coefficient: Option<String>,
    /// Number of bootstrap replicates.
    #[arg(long, default_value_t = 999)]
    replicates: usize,
    /// Two-sided significance level for the reported interval.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Resample whole clusters instead of rows (requires --cluster).
    #[arg(long)]
    clustered: bool,
    /// RNG seed; generated and printed when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file holding the data-generating-process configuration.
    #[arg(long)]
    config: PathBuf,
    /// Number of Monte Carlo replications.
    #[arg(long, default_value_t = 200)]
    replications: usize,
    /// RNG seed; generated and printed when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the summary (JSON) here in addition to stdout.
    #[arg(long)]
    out_summary: Option<PathBuf>,
    /// Write replicate-level rows as CSV here.
    #[arg(long)]
    out_replicates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    if let Ok(raw) = std::env::var("IVROBUST_THREADS") {
        if let Ok(threads) = raw.parse::<usize>() {
            if threads > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        } else {
            eprintln!("warning: ignoring unparseable IVROBUST_THREADS={raw}");
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => run::estimate(args),
        Command::Psiv(args) => run::psiv(args),
        Command::Bootstrap(args) => run::bootstrap(args),
        Command::Simulate(args) => run::simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_input_error() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
    }
}
