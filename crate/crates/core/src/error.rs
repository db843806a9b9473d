use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("alpha must lie in (0, 1], got {0}")]
    AlphaOutOfRange(f64),

    #[error("no analytic polynomial bound available for {0}")]
    NoPolyBound(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("threshold non-positive: {0}")]
    ThresholdNonPositive(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exhaustive search too large: {0}")]
    CapExceeded(String),

    /// A guarantee that holds by construction was violated.
    #[error("internal error: {0}")]
    Internal(String),
}
