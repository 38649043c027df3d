//! Driver for the `shapes` binary: GS1 shape files, JSON run configs,
//! per-command output files and a hashed run record.

pub mod checks;
pub mod commands;
pub mod config;
pub mod gs1;
pub mod output;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
/// Conventional code for termination by SIGINT; outputs are still flushed.
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) => EXIT_USAGE,
            CliError::Solver(_) | CliError::Io(_) => EXIT_SOLVER,
        }
    }
}

/// Thread count from `SHAPES_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("SHAPES_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("SHAPES_THREADS must be a positive integer, got {s:?}"))),
        },
    }
}
