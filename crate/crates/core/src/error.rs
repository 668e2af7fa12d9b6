//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument or precondition violation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A non-finite value appeared during evaluation.
    #[error("numeric overflow in `{op}`: {detail}")]
    Numeric { op: String, detail: String },

    /// Forward simulation left the sane-state region.
    #[error("simulation diverged at step {step}, sample {sample} (|x| = {magnitude:.3e})")]
    Diverged {
        step: usize,
        sample: usize,
        magnitude: f64,
    },

    /// A fixed-point iteration failed to reach its tolerance.
    #[error("iteration failed after {iters} sweeps (last residual {last:.3e})")]
    IterationFailure {
        iters: usize,
        last: f64,
        history: Vec<f64>,
    },

    /// Malformed persisted artifact.
    #[error("parse error in `{field}`: {detail}")]
    Parse { field: String, detail: String },

    /// Checkpoint written by an incompatible version of this crate.
    #[error("unsupported checkpoint version `{found}` (expected `{expected}`)")]
    UnsupportedVersion { found: String, expected: String },

    /// A training phase failed; the last rescue checkpoint, if any, is named.
    #[error("training aborted: {source} (last checkpoint: {checkpoint:?})")]
    TrainingAborted {
        checkpoint: Option<std::path::PathBuf>,
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }
}
