use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("operation not available for this boundary case: {0}")]
    WrongCase(String),

    #[error("q = {re}{im:+}i is within {distance:.3e} of a zero of the characteristic function")]
    NearPole { re: f64, im: f64, distance: f64 },

    #[error("no zero found: {0}")]
    NoZero(String),

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("spectral gap check failed: lambda1 = {lambda1} <= lambda0 = {lambda0}")]
    GapViolation { lambda0: f64, lambda1: f64 },

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("singular linear system: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;
