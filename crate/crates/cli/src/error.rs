use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line driver, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        key: Option<String>,
        line: Option<usize>,
        message: String,
    },
    #[error("numeric failure: {0}")]
    Numeric(gorl_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed file {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(gorl_core::Error),
    #[error("verification failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } | CliError::Format { .. } => 4,
            CliError::Core(gorl_core::Error::Io(_)) => 4,
            CliError::Core(_) | CliError::CheckFailed(_) => 1,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            key: Some(key.into()),
            line: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<gorl_core::Error> for CliError {
    fn from(e: gorl_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e)
        } else {
            CliError::Core(e)
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
