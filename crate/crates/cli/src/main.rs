//! `flowforge`: build coupling networks, run verification suites, sample pushforwards.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod suites;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowforge_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "flowforge", version, about = "Affine-coupling networks from underdamped Langevin flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a network and write network.json, report.json and probes.csv.
    Build(Common),
    /// Run one verification suite and write its CSV, schema and summary.
    Verify(Common),
    /// Push truncated Gaussian draws through a built network; write samples.csv and w1.json.
    Sample(Common),
}

/// Flags shared by every subcommand; each overrides the matching config field.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Bad or missing configuration; exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A suite assertion did not hold; exit code 1.
#[derive(Debug)]
pub struct AssertionFailed(pub String);

impl std::fmt::Display for AssertionFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for AssertionFailed {}

fn core_exit_code(e: &CoreError) -> u8 {
    match e.root() {
        CoreError::Divergence { .. } => 4,
        CoreError::SingularMatrix(_)
        | CoreError::SingularBlock { .. }
        | CoreError::Solvability { .. }
        | CoreError::Fit(_)
        | CoreError::DegenerateFit(_) => 3,
        CoreError::Dimension { .. }
        | CoreError::Input(_)
        | CoreError::Parameter(_)
        | CoreError::Precondition(_)
        | CoreError::Io(_)
        | CoreError::Json(_) => 2,
        CoreError::Chunk { .. } => unreachable!("root() strips chunk context"),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_exit_code(e);
        }
        if cause.is::<AssertionFailed>() {
            return 1;
        }
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Build(c) => commands::build(c),
        Command::Verify(c) => commands::verify(c),
        Command::Sample(c) => commands::sample(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
