use thiserror::Error;

/// Errors raised by the lab's numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("beta = {beta} outside [0, {beta_max}]")]
    BetaOutOfRange { beta: f64, beta_max: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("series did not converge: {0}")]
    Series(String),

    #[error("conditioning event has zero probability (threshold {threshold})")]
    ZeroConditioningProbability { threshold: f64 },

    #[error("cone holds {sites} sites, over the budget of {budget}")]
    ConeTooLarge { sites: u128, budget: u128 },

    #[error("dimension {0} unsupported (expected 1..=4)")]
    UnsupportedDimension(usize),

    #[error("shape mismatch: expected {expected} sites, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("degenerate partition state: all weights are zero")]
    DegenerateState,

    #[error("threshold t = {0} must exceed 1")]
    InvalidThreshold(f64),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("no samples satisfied the conditioning event: {0}")]
    NoHits(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
