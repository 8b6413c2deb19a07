//! `onebit`: theory solves, bounds, thresholds, simulations and figure data.
//!
//! Exit status: 0 on success, 2 on a usage error, 3 when `--strict` is set and
//! some cell failed numerically (outputs are still written first).

mod commands;
mod config;
mod figure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::commands::Failures;
use crate::config::{Cli, Command, Spec, OUT_DIR_ENV};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or paths.
    Usage(String),
    /// A computation failed in a way that leaves nothing to report.
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

fn run(cli: &Cli) -> Result<(Failures, bool), CliError> {
    let env_out = std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    let spec = Spec::resolve(cli.command.opts(), env_out, cli.command.name())?;
    let failures = match &cli.command {
        Command::Theory(_) => commands::theory(&spec)?,
        Command::Bound(_) => commands::bound(&spec)?,
        Command::Threshold(_) => commands::threshold(&spec)?,
        Command::Simulate(_) => commands::simulate(&spec)?,
        Command::Figure { name, .. } => figure::figure(*name, &spec)?,
    };
    Ok((failures, spec.strict))
}

fn main() -> ExitCode {
    // Clap reports its own parse errors with status 2.
    let cli = Cli::parse();
    match run(&cli) {
        Ok((failures, strict)) => {
            for f in &failures {
                eprintln!("warning: {f}");
            }
            if strict && !failures.is_empty() {
                eprintln!("error: {} numeric failure(s) under --strict", failures.len());
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
