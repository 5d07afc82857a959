use thiserror::Error;

/// Errors raised by the library. Verification failures are not errors; they
/// are reported as data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("observable incompatible with environment: {0}")]
    Incompatible(String),

    #[error("observable is not differentiable: {0}")]
    NonDifferentiable(String),

    #[error("p = {p} lies outside the strip [-1, 1]")]
    OutsideStrip { p: f64 },

    #[error("v = {v} outside the generating-function domain [{lo}, {hi}]")]
    OutsideDomain { v: f64, lo: f64, hi: f64 },

    #[error("point outside the action domain: {0}")]
    OutsideActionDomain(String),

    #[error("seed never reaches 2 below a_max = {a_max}")]
    UnboundedSeed { a_max: f64 },

    #[error("seed function invalid: {0}")]
    SeedInvalid(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("no sign change on [{lo}, {hi}] (f = {flo}, {fhi})")]
    NoBracket { lo: f64, hi: f64, flo: f64, fhi: f64 },

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("point is not fixed: residual {residual:e}")]
    NotFixed { residual: f64 },

    #[error("critical point does not map to a fixed point: residual {residual:e}")]
    Inconsistency { residual: f64 },

    #[error("sign pattern violation: {0}")]
    SignPattern(String),

    #[error("map is not positive monotone: {0}")]
    NotMonotone(String),

    #[error("decomposition step too large: delta = {delta} >= 1, try n >= {hint}")]
    DecompositionStep { delta: f64, hint: usize },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("implicit midpoint iteration did not converge (dt = {dt})")]
    MidpointNonConvergence { dt: f64 },

    #[error("empty record set")]
    Empty,
}

pub type Result<T> = std::result::Result<T, Error>;
