//! Command-line harness for pslab: exact correlation matrices, Monte Carlo
//! imbalance studies, replicated test calibration and table reproduction.

pub mod commands;
pub mod config;
pub mod reproduce;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

pub use config::{load_config, parse_config, ConfigError, CovSource, ExperimentConfig};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "PSLAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "pslab",
    version,
    about = "Covariate-adaptive randomization simulation laboratory"
)]
pub struct Cli {
    /// Worker threads; defaults to $PSLAB_THREADS, then all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact asymptotic imbalance correlation matrix for equal prevalence.
    CorMatrix(commands::CorMatrixArgs),
    /// Eigenvalues, multiplicities and eigenbasis of the correlation matrix.
    Eigen(commands::EigenArgs),
    /// Monte Carlo covariance of the normalized within-stratum imbalances.
    McCov(commands::McCovArgs),
    /// Replicated trial simulation running a battery of tests.
    SimulateTests(commands::SimulateArgs),
    /// Re-run a published table at desk scale, next to the published values.
    Reproduce(reproduce::ReproduceArgs),
}

/// Where a command writes its main CSV.
#[derive(Debug, Clone, Args)]
pub struct OutputArg {
    /// Write CSV here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl OutputArg {
    pub fn writer(&self) -> Result<Box<dyn std::io::Write>> {
        Ok(match &self.output {
            Some(path) => Box::new(std::io::BufWriter::new(
                std::fs::File::create(path)
                    .with_context(|| format!("cannot create {}", path.display()))?,
            )),
            None => Box::new(std::io::stdout().lock()),
        })
    }
}

/// Flag, then config, then environment; `None` leaves rayon's default.
pub fn resolve_threads(flag: Option<usize>, config: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag.or(config) {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{THREADS_ENV}={v} is not a thread count")),
        _ => Ok(None),
    }
}

pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        anyhow::ensure!(n > 0, "thread count must be positive");
        // a second call in the same process keeps the first pool
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            log::debug!("thread pool already initialized");
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateTests(args) => commands::simulate_tests(&args, cli.threads),
        other => {
            init_threads(resolve_threads(cli.threads, None)?)?;
            match other {
                Command::CorMatrix(args) => commands::cor_matrix(&args),
                Command::Eigen(args) => commands::eigen(&args),
                Command::McCov(args) => commands::mc_cov(&args),
                Command::Reproduce(args) => reproduce::reproduce(&args),
                Command::SimulateTests(_) => unreachable!(),
            }
        }
    }
}
