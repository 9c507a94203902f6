use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Checks ran to completion but at least one failed.
    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] limper::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 2,
            CliError::Failed(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Core(limper::Error::Budget(_)) => 3,
            CliError::Core(limper::Error::Io(_)) => 4,
            CliError::Core(limper::Error::Parse { .. }) => 2,
            CliError::Core(limper::Error::Domain(_)) => 2,
            CliError::Core(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
