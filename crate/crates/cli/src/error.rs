use std::path::Path;

use histopattern::io::IoError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OTHER: u8 = 1;
    pub const UNREADABLE: u8 = 2;
    pub const INVALID: u8 = 3;
    pub const WORKER: u8 = 4;
}

/// A failure carrying the exit code the process should end with.
#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn unreadable(path: &Path, detail: impl std::fmt::Display) -> Self {
        Self::new(exit::UNREADABLE, format!("cannot read {}: {detail}", path.display()))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(exit::INVALID, message)
    }

    pub fn worker(message: impl Into<String>) -> Self {
        Self::new(exit::WORKER, message)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = match e {
            IoError::Unreadable { .. } => exit::UNREADABLE,
            IoError::Malformed { .. } => exit::INVALID,
            IoError::Unwritable { .. } => exit::OTHER,
        };
        CliError::new(code, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
