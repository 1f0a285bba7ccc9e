//! Command-line driver: TOML configuration, the `optimize`, `simulate`,
//! `sweep` and `oracle-check` commands, and CSV output with a manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rfeh_core::simulator::RateModel;

use crate::commands::{Figure, Outcome};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{write_all, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "rfeh",
    version,
    about = "Transmission scheduling for RF energy harvesting"
)]
pub struct Cli {
    /// TOML configuration; the reference experiment when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Overrides `experiment.rate_model`: normalized or link-budget.
    #[arg(long, global = true)]
    pub rate_model: Option<RateModel>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Offline-optimal schedule of the configured scenario.
    Optimize,
    /// Replay one strategy through the feedback harvest model.
    Simulate {
        /// zero, optimal, max_harvest, tight_string or online.
        #[arg(long)]
        strategy: String,
    },
    /// Monte Carlo table behind one figure.
    Sweep {
        #[arg(long, value_enum)]
        figure: Figure,
    },
    /// Compare the solver against the brute-force grid on seeded instances.
    OracleCheck {
        /// Replaces the grid error as the allowed shortfall (test hook).
        #[arg(long, hide = true, allow_negative_numbers = true)]
        tolerance: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Optimize => "optimize",
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
            Command::OracleCheck { .. } => "oracle-check",
        }
    }
}

/// The configuration after command-line overrides.
pub fn effective_config(cli: &Cli) -> CliResult<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.experiment.seed = seed;
    }
    if let Some(model) = cli.rate_model {
        config.experiment.rate_model = model;
    }
    Ok(config)
}

/// Runs the command and writes its output; the message is for the terminal.
pub fn run(cli: &Cli) -> CliResult<String> {
    let config = effective_config(cli)?;
    let manifest = RunManifest::new(
        cli.command.name(),
        config.hash(),
        config.experiment.seed,
        config.experiment.rate_model.to_string(),
    );
    let outcome: Outcome = match &cli.command {
        Command::Optimize => commands::optimize(&config)?,
        Command::Simulate { strategy } => commands::simulate(&config, strategy)?,
        Command::Sweep { figure } => commands::sweep(&config, *figure)?,
        Command::OracleCheck { tolerance } => commands::oracle_check(&config, *tolerance)?,
    };
    let written = write_all(&cli.out, &outcome.tables, manifest)?;
    let paths: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    let message = format!("{}\nwrote {}", outcome.summary, paths.join(", "));
    match outcome.failure {
        Some(reason) => Err(CliError::Validation(format!("{message}\n{reason}"))),
        None => Ok(message),
    }
}
