use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the harness. Anything reachable from a bad config file
/// maps to exit code 2.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] nst_core::Error),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        BenchError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            BenchError::Config(_) | BenchError::Core(nst_core::Error::Config { .. })
        )
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
