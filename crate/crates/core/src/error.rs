use thiserror::Error;

/// Errors raised by the sampling library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} is not on the {steps}-step grid")]
    TimeOffGrid { t: f64, steps: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite {
        what: &'static str,
        min_eigenvalue: f64,
    },

    #[error("combined precision is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    LambdaNotSpd { min_eigenvalue: f64 },

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("numerical underflow: {0}")]
    NumericalUnderflow(String),

    #[error("missing capability: {0}")]
    MissingCapability(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
