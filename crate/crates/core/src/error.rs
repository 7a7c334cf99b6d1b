use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate observation for unit `{unit}` at time {time}")]
    DuplicateRow { unit: String, time: i64 },

    #[error("unit `{unit}`: {reason}")]
    InvalidUnit { unit: String, reason: String },

    #[error("unknown unit `{0}`")]
    UnknownUnit(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("cannot sample {requested} controls from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("covariance not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("non-finite objective at theta = {theta}")]
    NonFinite { theta: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::NotPositiveDefinite { .. } | Error::NonFinite { .. } | Error::Fit(_) => 4,
            _ => 3,
        }
    }
}
