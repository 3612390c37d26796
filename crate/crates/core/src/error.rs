use thiserror::Error;

/// Errors produced anywhere in the inference, training and I/O stack.
#[derive(Debug, Error)]
pub enum DbkError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (largest jitter tried {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("non-finite objective or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse { row: usize, column: String, message: String },

    #[error("dataset is empty")]
    EmptyData,

    #[error("target column is constant")]
    ConstantTarget,

    #[error("non-positive predictive variance at index {0}")]
    NonPositiveVariance(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("split fractions must sum to 1 (got {0})")]
    FractionMismatch(f64),

    #[error("dense GP refused: n = {n} exceeds the configured cap of {cap}")]
    DenseCapExceeded { n: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DbkError {
    /// Coarse category used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            DbkError::Io(_) => ErrorKind::Io,
            DbkError::NotPositiveDefinite { .. } | DbkError::NonFinite { .. } => ErrorKind::Numerical,
            DbkError::Csv(e) if e.is_io_error() => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Validation,
    Numerical,
}

pub type Result<T> = std::result::Result<T, DbkError>;
