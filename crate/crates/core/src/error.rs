use thiserror::Error;

/// Errors raised by the estimators and their supporting kernels.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("invalid observation {index}: {reason}")]
    InvalidObservation { index: usize, reason: String },

    #[error("missing instrument level: no observations with z = {z}")]
    MissingInstrumentLevel { z: usize },

    #[error(
        "first-stage condition violated for pair (z={z_low}, z={z_high}): \
         P({z_high}) = {p_high} is not greater than P({z_low}) = {p_low}"
    )]
    FirstStage {
        z_low: usize,
        z_high: usize,
        p_low: f64,
        p_high: f64,
    },

    #[error("two-sided noncompliance violated for pair (z={z_low}, z={z_high}): cell (z={z}, d={d}) is empty")]
    EmptyCell {
        z_low: usize,
        z_high: usize,
        z: usize,
        d: u8,
    },

    #[error("{context}: instrument must be binary, found levels 0..={k_max}")]
    NotBinaryInstrument { context: &'static str, k_max: usize },

    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("interval endpoints out of order: p = {p} must be below p' = {p_prime}")]
    Ordering { p: f64, p_prime: f64 },

    #[error("singular or rank-deficient system in {context}")]
    Singular { context: String },

    #[error("degenerate estimator: {0}")]
    Degenerate(String),

    #[error("outcome at observation {index} is {value}, expected 0 or 1")]
    NonBinaryOutcome { index: usize, value: f64 },

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("quadrature did not reach tolerance {tolerance:e} (estimated error {achieved:e})")]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("invalid link function: {0}")]
    InvalidLink(String),

    #[error("invalid data-generating spec: {0}")]
    InvalidSpec(String),

    #[error("covariate {0}")]
    Covariate(String),

    #[error("in covariate cell x = {x}: {source}")]
    InCell { x: String, source: Box<Error> },
}

impl Error {
    /// True for failures of the sample validity conditions (first stage,
    /// two-sided noncompliance, missing instrument levels).
    pub fn is_validity_failure(&self) -> bool {
        match self {
            Error::FirstStage { .. } | Error::EmptyCell { .. } | Error::MissingInstrumentLevel { .. } => true,
            Error::InCell { source, .. } => source.is_validity_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
