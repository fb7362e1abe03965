use thiserror::Error;

use crate::fockspace::SpaceSpec;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("space mismatch: {left} vs {right}")]
    SpaceMismatch { left: SpaceSpec, right: SpaceSpec },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// The Fock cutoff is too small for the requested state.
    #[error("truncation: {0}")]
    Truncation(String),

    #[error("expectation has imaginary part {0:e}; observable is not Hermitian")]
    NonHermitian(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("drift {drift:e} exceeds {limit:e} at t = {time} ms")]
    Convergence { drift: f64, limit: f64, time: f64 },

    #[error("density matrix lost positivity: min eigenvalue {min_eigenvalue:e} at t = {time} ms")]
    Positivity { min_eigenvalue: f64, time: f64 },

    #[error("fit residual rms {residual:e} exceeds {limit:e}")]
    Fit { residual: f64, limit: f64 },

    #[error("probe left the small-angle regime: rotation angle {angle:.3} >= {limit}")]
    Regime { angle: f64, limit: f64 },

    #[error("non-uniform time grid: {0}")]
    Grid(String),

    #[error("least-squares design matrix is rank deficient")]
    Rank,

    #[error("degenerate input: {0}")]
    Degenerate(String),
}
