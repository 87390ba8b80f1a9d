use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("constraint set is unbounded; a truncation radius is required")]
    UnboundedSet,

    #[error("kernel value at time bucket {bucket} lies outside the barrier cone")]
    KernelOutsideBarrierCone { bucket: usize },

    #[error("negative consumption {value} on path {path}, step {step}")]
    NegativeConsumption { path: usize, step: usize, value: f64 },

    #[error("nonpositive density {value} on path {path}, step {step}")]
    NonPositiveDensity { path: usize, step: usize, value: f64 },

    #[error("regression matrix is rank deficient at step {step} for basis {basis}")]
    RankDeficient { step: usize, basis: String },

    #[error("Picard iteration did not converge after {iters} iterations; residuals {history:?}")]
    PicardDivergence { iters: usize, history: Vec<f64> },

    #[error("bisection for the shadow price failed to bracket the budget {budget}; sampled curve {curve:?}")]
    BracketingFailed { budget: f64, curve: Vec<(f64, f64)> },

    #[error("outer fixed point did not converge after {iters} iterations; Y0 trace {trace:?}")]
    FixedPointDivergence { iters: usize, trace: Vec<f64> },

    #[error("empty kernel family")]
    EmptyKernelFamily,

    #[error("utility is not evaluable: {0}")]
    Utility(String),

    #[error("explicit scheme violates the CFL bound: ratio {ratio:.4} > 1")]
    CflViolation { ratio: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("config key `{key}` at {location}: {message}")]
    Config {
        key: String,
        location: String,
        message: String,
    },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
