use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("degenerate rigid fit: {0}")]
    DegenerateFit(String),

    #[error("tissue did not settle within {steps} steps (max speed {max_speed:.3e} m/s)")]
    SettleTimeout { steps: usize, max_speed: f64 },

    #[error("numeric blow-up at simulation step {step}")]
    NumericBlowup { step: u64 },

    #[error("empty view: {0}")]
    EmptyView(String),

    #[error("demonstration failed: {0}")]
    DemoFailure(String),

    #[error("dataset corrupt at {}: {reason}", path.display())]
    DatasetCorrupt { path: PathBuf, reason: String },

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error(transparent)]
    Tensor(#[from] goalshape_diff::TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::DatasetCorrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
