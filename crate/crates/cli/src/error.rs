use std::path::Path;
use std::process::ExitCode;

use thiserror::Error;

/// Exit statuses of the `shakegen` binary.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    /// Constraints violated or too few valid samples.
    pub const FAILURE: u8 = 2;
    pub const USAGE: u8 = 64;
    pub const DATA: u8 = 65;
    pub const IO: u8 = 74;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad command line or configuration file.
    #[error("{0}")]
    Config(String),
    /// Input data inconsistent with the configuration.
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Library(#[from] shakegen::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => exit::USAGE,
            HarnessError::Data(_) | HarnessError::Library(_) => exit::DATA,
            HarnessError::Io { .. } => exit::IO,
        }
    }
}

impl From<HarnessError> for ExitCode {
    fn from(e: HarnessError) -> Self {
        ExitCode::from(e.exit_code())
    }
}
