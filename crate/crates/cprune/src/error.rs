use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

/// Command failure, split by who has to act on it.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file or settings.
    #[error("config error: {0}")]
    Config(String),
    /// Unreadable, malformed or inconsistent input or output files.
    #[error("data error: {0}")]
    Data(String),
    /// A failure that valid inputs should never produce.
    #[error("internal error: {0}")]
    Internal(String),
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

impl CliError {
    pub fn data(path: &Path, e: impl Display) -> Self {
        Self::Data(format!("{}: {e}", path.display()))
    }

    pub fn internal(e: impl Display) -> Self {
        Self::Internal(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Data(_) => EXIT_DATA,
            Self::Internal(_) => EXIT_INTERNAL,
        }
    }
}
