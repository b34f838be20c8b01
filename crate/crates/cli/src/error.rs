use std::path::PathBuf;

use locc_geometry::LoccError;
use thiserror::Error;

/// Process exit codes. Usage errors are reported by clap with code 2.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const MALFORMED_JSON: u8 = 4;
    pub const DIMENSION_MISMATCH: u8 = 5;
    pub const UNKNOWN_BUILTIN: u8 = 6;
    pub const INVALID_INPUT: u8 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {origin}: {source}")]
    Json {
        origin: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] LoccError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } => exit::IO,
            Self::Json { .. } => exit::MALFORMED_JSON,
            Self::Usage(_) => exit::USAGE,
            Self::Core(e) => match e {
                LoccError::Json(_) => exit::MALFORMED_JSON,
                LoccError::DimensionMismatch { .. } => exit::DIMENSION_MISMATCH,
                LoccError::UnknownBuiltin(_) => exit::UNKNOWN_BUILTIN,
                _ => exit::INVALID_INPUT,
            },
        }
    }

    /// Stable machine-readable tag printed alongside the message.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::IO => "io",
            exit::MALFORMED_JSON => "malformed-json",
            exit::DIMENSION_MISMATCH => "dimension-mismatch",
            exit::UNKNOWN_BUILTIN => "unknown-builtin",
            exit::USAGE => "usage",
            _ => "invalid-input",
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
