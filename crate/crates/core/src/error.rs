use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = LmfnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LmfnError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("backward: {0}")]
    Backward(String),

    #[error("optimizer: {0}")]
    Optimizer(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },
}

impl LmfnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LmfnError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        LmfnError::InvalidShape {
            op,
            msg: msg.into(),
        }
    }

    /// True for failures that come from bad numbers rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, LmfnError::Numerical(_))
    }
}
