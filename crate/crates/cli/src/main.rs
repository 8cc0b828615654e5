//! `vnel`: batch command-line driver.
//!
//! Each subcommand resolves its configuration (config file, then flags),
//! writes it to `<out>/run_config.json`, runs one library operation and
//! writes its artifact next to it.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data contract
//! error, 4 I/O error. Failures print one line to stderr.

mod args;
mod commands;
mod config;
mod model;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use crate::args::Cli;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] vnel::Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 4,
            CliError::Core(e) if e.is_io() => 4,
            CliError::Core(vnel::Error::Config(_)) => 2,
            CliError::Core(_) => 3,
        }
    }

    /// Short machine-readable tag followed by the detail, on one line.
    fn reason(&self) -> String {
        let line = match self {
            CliError::Core(e) => format!("{}: {e}", core_kind(e)),
            other => other.to_string(),
        };
        line.replace(['\n', '\r'], " ")
    }
}

fn core_kind(e: &vnel::Error) -> &'static str {
    use vnel::Error::*;
    match e {
        Io { .. } => "io",
        Image { .. } => "image",
        Parse { .. } => "parse",
        DuplicateEntity(_) => "duplicate entity",
        EmptyEntity(_) => "empty entity",
        DuplicateMention(_) => "duplicate mention",
        InvalidBBox { .. } => "invalid bbox",
        UnknownEntity { .. } => "unknown entity",
        MissingGold(_) => "missing gold",
        MissingModality { .. } => "missing modality",
        DimMismatch { .. } => "dim mismatch",
        DegenerateEmbedding => "degenerate embedding",
        Contract(_) => "contract",
        Config(_) => "config",
        EmptyIndex(_) => "empty index",
        EmptyDataset => "empty dataset",
        SplitInfeasible { .. } => "split infeasible",
        Format(_) => "format",
        Version { .. } => "version",
    }
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // help and version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            return fail(&CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {}", e.reason());
    ExitCode::from(e.exit_code())
}
