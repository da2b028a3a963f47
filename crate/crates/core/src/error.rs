use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by `{what}`")]
    NonFinite { what: String },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("input `{0}` was not bound before forward")]
    UnboundInput(String),

    #[error("unknown graph input `{0}`")]
    UnknownInput(String),

    #[error("dimension mismatch: expected length {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("not a probability simplex: {0}")]
    NotSimplex(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged in {stage} at epoch {epoch}: loss = {loss}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        loss: f64,
    },

    #[error("no certain training points for class(es) {0:?}")]
    MissingCertainClass(Vec<usize>),

    #[error("group `{0}` is empty")]
    EmptyGroup(String),

    #[error("metric `{0}` is evaluation-only and has no gradient")]
    NonDifferentiable(&'static str),

    #[error("empty candidate set")]
    EmptySet,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("corrupt artifact {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than bad input or IO.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence { .. })
    }
}
