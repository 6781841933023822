//! Batch CLI over the psou library. Every command reads JSON configs,
//! writes artifacts to deterministic paths, and prints a manifest of what
//! it produced; errors go to stderr as a single machine-readable line.

mod commands;
mod config;
mod emit;
mod validate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failure classes, in decreasing blame on the caller: bad input, a
/// numerical breakdown, filesystem trouble, or a failed validation suite.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
    Validation(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
            CliError::Validation(_) => "validation",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Numerical(m)
            | CliError::Io(m)
            | CliError::Validation(m) => m,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

#[derive(Parser)]
#[command(
    name = "psou",
    version,
    about = "Simulate and calibrate matrix-valued Ornstein-Uhlenbeck processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path and write grid and jump records as CSV
    Simulate(commands::SimulateArgs),
    /// Write the closed-form stationary moment report for a model
    Moments(commands::MomentsArgs),
    /// Draw independent stationary samples and report their Monte Carlo moments
    SampleStationary(commands::SampleArgs),
    /// Fit drift and driver moments from a moment report or recorded draws
    Fit(commands::FitArgs),
    /// Factorize a jump covariance, build a driver from targets, or report mixture moments
    Subordinator(commands::SubordinatorArgs),
    /// Recover the drift matrix from a serialized semigroup probe config
    ExtractOp(commands::ExtractArgs),
    /// Run a named validation suite and write its pass/fail report
    Validate(commands::ValidateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Moments(args) => commands::moments(args),
        Command::SampleStationary(args) => commands::sample_stationary(args),
        Command::Fit(args) => commands::fit(args),
        Command::Subordinator(args) => commands::subordinator(args),
        Command::ExtractOp(args) => commands::extract_op(args),
        Command::Validate(args) => commands::validate(args),
    };
    match result {
        Ok(manifest) => {
            print!("{}", emit::to_json(&manifest));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", emit::error_json(&e));
            ExitCode::from(e.exit_code())
        }
    }
}
