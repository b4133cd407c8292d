//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed libsvm input.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A partition request that cannot be satisfied (e.g. more devices than samples).
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// Bad argument to a generator or operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vector/matrix dimension mismatch.
    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A stochastic-gradient batch referenced an index outside the device shard.
    #[error("invalid batch: index {index} is not in shard {device}")]
    InvalidBatch { index: usize, device: usize },

    /// Schedule parameters outside their admissible range.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// The dataset induces an all-zero Hessian; no spectral quantities exist.
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    /// The simulated loss became non-finite or exceeded the divergence guard.
    #[error("divergence at step {step} (step size {step_size:e}): loss {loss:e}")]
    Divergence {
        step: u64,
        step_size: f64,
        loss: f64,
    },

    /// An iterative solver hit its iteration cap before meeting its tolerance.
    #[error(
        "convergence failure after {iters} iterations: gradient norm {grad_norm:e} > tol {tol:e}"
    )]
    ConvergenceFailure {
        iters: u64,
        grad_norm: f64,
        tol: f64,
    },

    /// Attempt to write a report with no rows.
    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
