use thiserror::Error;

/// Errors produced by kernel evaluation, quadrature, assembly, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (diagonal pair,
    /// non-finite coordinate, negative radius, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario or builder precondition failed (box too small, ball not
    /// inside the lattice box, inconsistent constants, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Quadrature or an iterative solver did not reach its target; carries
    /// the best value obtained so far.
    #[error("numeric error: {msg} (partial value {partial:e})")]
    Numeric { msg: String, partial: f64 },

    /// Request exceeds a documented desk-scale limit.
    #[error("capability error: {0}")]
    Capability(String),

    /// Too few usable samples to produce the requested estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
