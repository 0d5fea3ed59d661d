use thiserror::Error;

/// Errors raised by mechanisms, estimators, the oracle and the accountant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid ternary vector: {0}")]
    InvalidVector(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("hash does not match mechanism: {0}")]
    HashMismatch(String),

    #[error("degenerate estimator denominator: {0}")]
    Degenerate(String),

    #[error("enumeration of size {size} exceeds limit {limit}")]
    TooLarge { size: u128, limit: u128 },

    #[error("likelihood ratio bound violated: {0}")]
    RatioBound(String),

    #[error("empty input")]
    Empty,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
