use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is not positive definite after jitter escalation up to {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("location ({x}, {y}) is outside the field extent")]
    OutOfDomain { x: f64, y: f64 },

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("polynomial degree {degree} is too high for the fit range (condition number {condition:e})")]
    DegreeTooHigh { degree: usize, condition: f64 },

    #[error("rank-deficient regressor: {0}")]
    RankDeficient(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("posterior variance {variance:e} is negative beyond round-off (prior {prior:e})")]
    NegativeVariance { variance: f64, prior: f64 },
}
