use thiserror::Error;

/// Errors raised by the token-merging engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("empty token set: {0}")]
    EmptySet(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("inconsistent merge state: {0}")]
    Consistency(String),

    #[error("non-finite value produced during {stage}")]
    NonFinite { stage: &'static str },

    #[error("invalid noise schedule: {0}")]
    Schedule(String),

    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
