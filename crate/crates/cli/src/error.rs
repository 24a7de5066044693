use std::path::PathBuf;

use vidtome_core::Error as CoreError;

/// Failure of a CLI command; each variant maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format: {0}")]
    Format(String),
    #[error("numeric failure: {0}")]
    Numeric(#[source] CoreError),
}

impl CliError {
    pub const USAGE_EXIT: i32 = 2;
    pub const NUMERIC_EXIT: i32 = 3;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => Self::NUMERIC_EXIT,
            _ => Self::USAGE_EXIT,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// Core errors raised while validating inputs are configuration problems.
    pub(crate) fn config(err: CoreError) -> CliError {
        CliError::Config(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
