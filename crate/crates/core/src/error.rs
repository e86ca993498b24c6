use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix of size {size} is numerically not positive definite (jitter escalated to {max_jitter:e})")]
    NotPositiveDefinite { size: usize, max_jitter: f64 },

    #[error("optimizer failed to find a finite objective from any of {starts} starts")]
    OptimizationFailed { starts: usize },

    #[error("{failed} of {total} resampling replicates failed (limit is 5%)")]
    TooManyReplicateFailures { failed: usize, total: usize },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("dataset has {0} valid rows; at least 2 are required")]
    TooFewRows(usize),

    #[error("preprocessing left no observations")]
    EmptyResult,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::OptimizationFailed { .. } => "optimization_failed",
            Error::TooManyReplicateFailures { .. } => "too_many_replicate_failures",
            Error::MissingColumn(_) => "missing_column",
            Error::Parse { .. } => "parse",
            Error::TooFewRows(_) => "too_few_rows",
            Error::EmptyResult => "empty_result",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
