use thiserror::Error;

/// Errors raised by mesh handling, discretisation and solver setup.
#[derive(Debug, Error)]
pub enum BemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mesh validation failed: {0}")]
    Validation(String),

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("assembly of block ({row}, {col}) failed: {source}")]
    Block {
        row: usize,
        col: usize,
        #[source]
        source: Box<BemError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BemError> = std::result::Result<T, E>;
