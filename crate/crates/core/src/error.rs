use thiserror::Error;

/// Errors raised by the estimator, the operator machinery and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "matrix is not positive definite (smallest eigenvalue {min_eig:e}, largest {max_eig:e})"
    )]
    NotPositiveDefinite { min_eig: f64, max_eig: f64 },

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("scaling matrix is singular (|det| = {0:e})")]
    SingularScaling(f64),

    #[error("image of the iterate under the map is numerically singular")]
    SingularImage,

    #[error("spectral budget exceeded: {what} = {value} exceeds limit {limit}")]
    BudgetExceeded {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("matrix is not orthogonal (deviation {0:e})")]
    NotOrthogonal(f64),

    #[error("projection rank {rank} exceeds half the dimension {dim}")]
    RankTooLarge { rank: usize, dim: usize },

    #[error("insufficient data: need at least {required} points, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("sample {index} is the zero vector")]
    AllZeroSample { index: usize },

    #[error("sample {index} rounds to the zero vector")]
    RoundedToZero { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
