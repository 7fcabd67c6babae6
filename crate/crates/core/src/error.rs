use thiserror::Error;

/// Errors raised by the cpca routines.
#[derive(Debug, Error)]
pub enum CpcaError {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("column `{0}` has zero sample variance")]
    ZeroVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient design, dependent columns {0:?}")]
    RankDeficient(Vec<usize>),

    #[error("cluster {cluster} has {size} member(s), at least {min} required")]
    ClusterTooSmall {
        cluster: usize,
        size: usize,
        min: usize,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CpcaError>;
