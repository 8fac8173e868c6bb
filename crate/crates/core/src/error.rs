use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad index, shape, range).
    #[error("usage error: {0}")]
    Usage(String),

    /// A domain type would be constructed in a state that breaks its invariants.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("unsupported element: {0}")]
    UnsupportedElement(String),

    #[error("atoms {i} and {j} overlap (distance {distance:.4} Å)")]
    Overlap { i: usize, j: usize, distance: f64 },

    #[error("atom {atom} has fewer than {k} neighbours within r_max = {r_max} Å")]
    EmptyNeighborhood { atom: usize, k: usize, r_max: f64 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("structures are not comparable: {0}")]
    Incomparable(String),

    #[error("labelled data contains a single class")]
    DegenerateLabels,

    #[error("storage error: {0}")]
    Storage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("replay mismatch at iteration {iteration}: {detail}")]
    ReplayMismatch { iteration: usize, detail: String },

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::InvariantViolation(msg.into())
    }
}
