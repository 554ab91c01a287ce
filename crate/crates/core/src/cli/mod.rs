//! The `lglab` command line: `gen`, `train`, `eval`, `probe` and
//! `verify-construction`. Every run writes `<subcommand>.manifest.json`
//! into the output directory.
//!
//! Exit codes: 0 success, 1 failed verification or runtime error, 2 usage
//! or configuration error.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use commands::{EvalArgs, GenArgs, ProbeArgs, TrainArgs, VerifyArgs};
pub use config::{resolve, sha256_file, write_manifest, CommonArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "lglab", version, about = "Length-generalization experiments on small transformers")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset file.
    Gen(GenArgs),
    /// Train a model and write a checkpoint and metrics.
    Train(TrainArgs),
    /// Greedy-decode evaluation across lengths.
    Eval(EvalArgs),
    /// Basis projections and mechanism metrics.
    Probe(ProbeArgs),
    /// Check the exact construction against the oracle.
    VerifyConstruction(VerifyArgs),
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Verification(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn setup_threads(run: &RunConfig) -> Result<(), Failure> {
    if run.threads > 0 {
        // A pool already set by an embedding caller is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(run.threads).build_global();
    }
    std::fs::create_dir_all(&run.out)?;
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Gen(a) => {
            let (run, a) = resolve("gen", c, a)?;
            setup_threads(&run)?;
            commands::gen(&run, a)
        }
        Command::Train(a) => {
            let (run, a) = resolve("train", c, a)?;
            setup_threads(&run)?;
            commands::train(&run, a)
        }
        Command::Eval(a) => {
            let (run, a) = resolve("eval", c, a)?;
            setup_threads(&run)?;
            commands::eval(&run, a)
        }
        Command::Probe(a) => {
            let (run, a) = resolve("probe", c, a)?;
            setup_threads(&run)?;
            commands::probe(&run, a)
        }
        Command::VerifyConstruction(a) => {
            let (run, a) = resolve("verify-construction", c, a)?;
            setup_threads(&run)?;
            commands::verify(&run, a)
        }
    }
}

/// Parses the process arguments, runs the subcommand and maps the outcome
/// to an exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
