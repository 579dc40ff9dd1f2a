use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An operand or input fell outside the domain of an operation
    /// (log of a non-positive value, division by zero, non-finite state).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unbound slot: {0}")]
    UnboundSlot(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation `{0}` is not supported for this target")]
    UnsupportedForTarget(&'static str),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("all importance weights underflowed to zero")]
    DegenerateWeights,

    #[error("aggregation needs at least 2 reports, got {0}")]
    InsufficientSeeds(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_finite(x: &[f64], what: &str) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Domain(format!("{what}: component {i} is {}", x[i]))),
    }
}
