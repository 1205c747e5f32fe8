use std::path::{Path, PathBuf};

use fuselocate::experiment::ExperimentError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_MISSING: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot {action} {}: {source}", path.display())]
    Io {
        action: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("missing {} (produced by `{stage}`)", path.display())]
    Missing { path: PathBuf, stage: &'static str },
    #[error("{0}")]
    Experiment(#[from] ExperimentError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Malformed { .. } => EXIT_IO,
            CliError::Missing { .. } => EXIT_MISSING,
            CliError::Experiment(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Experiment(_) => EXIT_CONFIG,
        }
    }

    pub fn io(action: &'static str, path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            action,
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn malformed(path: &Path, message: impl ToString) -> Self {
        CliError::Malformed {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
