use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row {row}: expected {expected} fields, found {found}")]
    MalformedRow { row: usize, expected: usize, found: usize },
    #[error("bad label {value:?} on row {row}")]
    BadLabel { row: usize, value: String },
    #[error("row {0} is all zeros")]
    ZeroSample(usize),
    #[error("synthetic generation failed: {0}")]
    GenerationFailed(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("instance too large: {what} = {size} exceeds cap {cap}")]
    TooLarge { what: &'static str, size: usize, cap: usize },
    #[error("sign condition diag(y)λ ≥ 0 violated at index {0}")]
    SignViolation(usize),
    #[error("dataset is not in the required regime: {0}")]
    WrongRegime(String),
    #[error("problem is infeasible: {0}")]
    Infeasible(String),
    #[error("ellipsoid method exhausted {0} iterations")]
    IterationExhausted(usize),
    #[error("factorization failed: {0}")]
    FactorizationFailure(String),
    #[error("mask could not be realized by any hyperplane")]
    Unrealizable,
    #[error("pattern count exceeded cap {0}")]
    CapExceeded(usize),
    #[error("dual problem is unbounded")]
    Unbounded,
    #[error("denominator vanishes")]
    ZeroDenominator,
    #[error("direction vector is zero")]
    ZeroDirection,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
