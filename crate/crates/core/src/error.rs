use thiserror::Error;

/// Errors produced anywhere in the optimizer, the benchmark harness or the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("cholesky factorization failed after jitter levels {attempted:?}")]
    Cholesky { attempted: Vec<f64> },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("non-finite observation {value} at x = {x:?}, context index {context}")]
    NonFiniteObservation { value: f64, x: Vec<f64>, context: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
