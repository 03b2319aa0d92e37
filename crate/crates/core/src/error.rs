use thiserror::Error;

#[derive(Debug, Error)]
pub enum DcError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero operator")]
    ZeroOperator,
    #[error("p exceeds n ({p} > {n})")]
    PExceedsN { p: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),
    #[error("line search failed after {0} backtracks")]
    LineSearchFailed(usize),
    #[error("malformed instance file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DcError>;
