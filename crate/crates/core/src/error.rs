use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// No memoryless dyad-independent model matches both the edge probability and the duration.
    #[error("consistency violation: p/((1-p)D) = {ratio} exceeds 1 (theta = {theta}, D = {duration})")]
    ConsistencyViolation {
        theta: f64,
        duration: f64,
        ratio: f64,
    },

    /// An acceptance probability R_ij / P(j|i) exceeded one; lambda or the odds bound is too small.
    #[error(
        "acceptance overflow: ratio {ratio} > 1 when {kind} dyad ({a}, {b}); increase lambda or the odds bound"
    )]
    AcceptanceOverflow {
        ratio: f64,
        kind: &'static str,
        a: u32,
        b: u32,
    },

    /// Some row of R has a negative diagonal.
    #[error(
        "R is not normalized: state {state} has outflow {outflow} > 1; lambda must be at least {min_lambda}"
    )]
    NormalizationFailure {
        state: usize,
        outflow: f64,
        min_lambda: f64,
    },

    #[error("transition matrix is reducible: {0}")]
    Reducible(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("calibration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Per-iteration statistic gaps, as many as were kept.
        trace: Vec<Vec<f64>>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
