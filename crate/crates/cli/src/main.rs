//! `falter`: velocity metrics, faltering classification and the simulation
//! benchmark from the command line.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{AnalyzeArgs, ClassifyArgs, DataArgs, ModelArgs, SimulateArgs};

/// A usage or configuration problem (exit status 1).
#[derive(Debug)]
pub enum Failure {
    Config(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

#[derive(Parser, Debug)]
#[command(name = "falter", version, about = "Growth velocity metrics and faltering classification")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "FALTER_OUT_DIR")]
    out: Option<PathBuf>,
    /// Worker threads for replications (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation scenario and write the true-positive and agreement tables.
    Simulate {
        #[command(flatten)]
        sim: SimulateArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Ingest data, compute velocities, classify and export plot data.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        classify: ClassifyArgs,
        #[command(flatten)]
        analyze: AnalyzeArgs,
    },
    /// Ingest data and write velocity tables only.
    Velocity {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Metrics to compute, comma separated.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
    },
    /// Classify a velocity table written by `velocity` or `analyze`.
    Classify {
        /// Velocity table (child_id,metric,velocity,defined).
        #[arg(long)]
        velocities: PathBuf,
        #[command(flatten)]
        classify: ClassifyArgs,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Agreement between two label files.
    Agree {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
    },
    /// Rebuild the scenario tables from a replications.jsonl file.
    Report {
        #[arg(long)]
        replications: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use falter_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<Failure>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidConfig(_) | E::InvalidKnots(_) | E::InvalidWindow { .. } => 1,
                E::SingularDesign(_) | E::Degenerate(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
