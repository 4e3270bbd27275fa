//! `mplab` command-line frontend: simulate, extract, dataset, train,
//! evaluate and the end-to-end `pipeline`.

// `!(x > y)` comparisons reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

pub use commands::{
    run_constellation, run_dataset, run_evaluate, run_extract, run_pipeline, run_simulate, run_train,
    ConstellationArgs, DatasetArgs, EvaluateArgs, ExtractArgs, SimulateArgs, TrainArgs,
};
pub use config::{PipelineConfig, TargetSetting};

use std::path::PathBuf;

use clap::{CommandFactory, Parser, Subcommand};
use thiserror::Error;

/// Environment variable consulted when no seed is given on the command line
/// or in a config file.
pub const SEED_ENV: &str = "MPLAB_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn file(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::File {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mplab", version, about = "Dual-antenna GPS multipath detection experiments")]
struct Cli {
    /// Random seed (falls back to the config file, then MPLAB_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic broadcast navigation file.
    Constellation(ConstellationArgs),
    /// Ray-trace scenes into dual-antenna RINEX pairs and truth CSVs.
    Simulate(SimulateArgs),
    /// Turn a RINEX pair, navigation file and optional truth into a feature CSV.
    Extract(ExtractArgs),
    /// Combine, balance and split feature CSVs into training and test sets.
    Dataset(DatasetArgs),
    /// Grid-search and fit a classifier.
    Train(TrainArgs),
    /// Score models on datasets.
    Evaluate(EvaluateArgs),
    /// Run every stage from one JSON config file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, clap::Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Seed precedence: flag, then config, then `MPLAB_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn usage_text(subcommand: Option<&str>) -> String {
    let mut cmd = Cli::command();
    let sub = subcommand.and_then(|name| cmd.find_subcommand_mut(name).cloned());
    match sub {
        Some(mut s) => s.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

/// Run the command line `argv` (program name first) and return the exit
/// code: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let name = match &cli.command {
        Command::Constellation(_) => "constellation",
        Command::Simulate(_) => "simulate",
        Command::Extract(_) => "extract",
        Command::Dataset(_) => "dataset",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Pipeline(_) => "pipeline",
    };
    let result = match cli.command {
        Command::Constellation(a) => resolve_seed(cli.seed, None).and_then(|s| run_constellation(&a, s)),
        Command::Simulate(a) => resolve_seed(cli.seed, None).and_then(|s| run_simulate(&a, s)),
        Command::Extract(a) => run_extract(&a),
        Command::Dataset(a) => resolve_seed(cli.seed, None).and_then(|s| run_dataset(&a, s)),
        Command::Train(a) => resolve_seed(cli.seed, None).and_then(|s| run_train(&a, s)),
        Command::Evaluate(a) => run_evaluate(&a),
        Command::Pipeline(a) => PipelineConfig::load(&a.config).and_then(|mut config| {
            if let Some(out) = a.out {
                config.output = out;
            }
            let seed = resolve_seed(cli.seed, config.seed)?;
            run_pipeline(&config, seed)
        }),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}\n\n{}", usage_text(Some(name)));
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
