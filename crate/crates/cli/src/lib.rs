//! Command-line driver: configuration, experiment orchestration and CSV reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;
pub mod status;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Config, Experiment};
pub use experiments::Session;
pub use status::{Failure, Status};

#[derive(Debug, Parser)]
#[command(name = "mflab", version, about = "Numerical checks for mean-field Langevin particle systems")]
pub struct Cli {
    /// TOML configuration file. Flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, value_name = "K")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Tabulate the log-Sobolev and Poincare constants over a grid.
    Constants,
    /// Run the particle system and record snapshots.
    Simulate,
    /// Check the integrated Bochner identity on Gibbs samples.
    CheckGamma2,
    /// Check the second-order Poincare inequality.
    CheckPoincare,
    /// Check the defective log-Sobolev inequality.
    CheckDlsi,
    /// Estimate the spectral gap from a test-function dictionary.
    EstimateGap,
    /// Fit exponential entropy decay on the Gaussian model.
    FitDecay,
    /// Check that a kernel is of positive type.
    CheckKernel,
    /// Compare empirical tails with the concentration envelope.
    Concentration,
    /// Run every experiment and write a summary.
    FullSuite,
    /// Run the experiment named in the configuration file.
    Run,
}

impl Command {
    fn experiment(self) -> Option<Experiment> {
        Some(match self {
            Command::Constants => Experiment::Constants,
            Command::Simulate => Experiment::Simulate,
            Command::CheckGamma2 => Experiment::CheckGamma2,
            Command::CheckPoincare => Experiment::CheckPoincare,
            Command::CheckDlsi => Experiment::CheckDlsi,
            Command::EstimateGap => Experiment::EstimateGap,
            Command::FitDecay => Experiment::FitDecay,
            Command::CheckKernel => Experiment::CheckKernel,
            Command::Concentration => Experiment::Concentration,
            Command::FullSuite => Experiment::FullSuite,
            Command::Run => return None,
        })
    }
}

/// Resolves the configuration: flags, then the file, then defaults.
pub fn resolve(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(exp) = cli.command.experiment() {
        cfg.experiment = exp;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the configured experiment on a dedicated thread pool.
pub fn run(cfg: Config) -> Result<Status, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let exp = cfg.experiment;
        let mut session = Session::new(cfg)?;
        session.run(exp)
    })
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let status = resolve(&cli).and_then(run).unwrap_or_else(|f| {
        eprintln!("error: {}", f.message);
        f.status
    });
    println!("status: {status}");
    status.code()
}
