use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, bad hyperparameters, malformed checkpoints.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid data handed to an operation (lengths, indices, empty inputs).
    #[error("input error: {0}")]
    Input(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value surfaced during numeric work.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Text-format parse failure with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
