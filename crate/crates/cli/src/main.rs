//! `ncdoa`: identifiability checks, Cramér-Rao bounds, single estimates and
//! Monte Carlo sweeps for arrays of non-coherent subarrays.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ncdoa", version, about = "DOA estimation with non-coherent subarrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the scenario comes from: a TOML file or a bundled preset.
#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    config: Option<PathBuf>,
    /// Bundled scenario (see `ncdoa presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lag count, corollary bound and Kruskal-rank estimate of the array.
    Identifiability {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Random probes per candidate rank (default 200; `--trials` sets it too).
        #[arg(long)]
        probes: Option<usize>,
    },
    /// Exact CRB at every sweep point.
    Crb {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the estimators once, on a simulated trial or on a covariance file.
    Estimate {
        /// Scenario TOML or covariance file (`ncdoa-covariance` format).
        input: Option<PathBuf>,
        #[arg(long, conflicts_with = "input")]
        preset: Option<String>,
        /// Scenario providing the array when `input` is a covariance file.
        #[arg(long)]
        geometry: Option<PathBuf>,
        /// Number of sources (covariance input; defaults to the scenario's).
        #[arg(long)]
        sources: Option<usize>,
        /// Seed of the simulated trial.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the simulated covariances here.
        #[arg(long)]
        save_covariances: Option<PathBuf>,
        /// Write the SPICE spectrum (`doa_deg,power`) here.
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Monte Carlo sweep; one CSV row per sweep point and estimator.
    Montecarlo {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List bundled scenarios, or print one.
    Presets { name: Option<String> },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
