//! Command-line front end for the two-source estimation toolkit.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "twosource", version, about = "Quantum limits for resolving two incoherent point sources")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Overlap coefficients per separation.
    Overlaps(CommonArgs),
    /// Classical FIM, QFI and information regrets per measurement.
    Regrets(CommonArgs),
    /// Commuting SLD gauges from both solvers and their joint eigenbasis.
    Gauge {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write full per-scene diagnostics as JSON.
        #[arg(long, value_name = "PATH")]
        dump: Option<PathBuf>,
    },
    /// Monte Carlo MLE variances against the Cramér-Rao bound.
    Simulate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
}

/// Runs one command; returns the diagnostic lines meant for stderr.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let common = match &cli.command {
        Command::Overlaps(c) | Command::Regrets(c) | Command::Simulate(c) => c,
        Command::Gauge { common, .. } => common,
    };
    let (config, base) = RunConfig::load(&common.config)?;
    let mut resolved = config.resolve(&base)?;
    if let Some(seed) = common.seed {
        resolved.seed = seed;
    }
    let output = match &cli.command {
        Command::Overlaps(_) => commands::overlaps(&resolved)?,
        Command::Regrets(_) => commands::regrets(&resolved)?,
        Command::Simulate(_) => commands::simulate(&resolved)?,
        Command::Gauge { dump, .. } => {
            let (output, dumps) = commands::gauge(&resolved)?;
            if let Some(path) = dump {
                let json = serde_json::to_string_pretty(&dumps).expect("diagnostics serialize");
                write(path, &json)?;
            }
            output
        }
    };
    let csv = output.table.render();
    match common.out.as_ref().or(resolved.output.as_ref()) {
        Some(path) => write(path, &csv)?,
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(csv.as_bytes())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })?;
        }
    }
    Ok(output.messages)
}

fn write(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}
