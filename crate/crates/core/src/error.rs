use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unstable parameters: delta = {delta}, g = {g} violates delta < -4 g^2")]
    Unstable { delta: f64, g: f64 },

    #[error("{0} is singular at delta = {1}")]
    Singular(&'static str, f64),

    #[error("time {t} outside schedule domain [0, {end}]")]
    OutOfDomain { t: f64, end: f64 },

    #[error("fixed-point iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("Bogoliubov constraint residual {0:e} exceeds tolerance")]
    ConstraintResidual(f64),

    #[error("trace drift {drift:e} at t = {t} exceeds tolerance")]
    TraceDrift { drift: f64, t: f64 },

    #[error("non-finite value in state at t = {0}")]
    NonFinite(f64),

    #[error("operator dimension {0} too large for the dense oracle")]
    TooLarge(usize),

    #[error("timescale hierarchy violated: {0}")]
    Hierarchy(String),

    #[error("energy ledger closure residual {0:e} exceeds tolerance; sampling stride too coarse")]
    LedgerClosure(f64),

    #[error("not a valid density matrix: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, Error>;
