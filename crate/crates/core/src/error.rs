use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the toolchain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantization parameters: {0}")]
    InvalidQuantParams(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("network config error: {0}")]
    Config(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("state error: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error at epoch {epoch}, batch {batch}: {message}")]
    Numeric {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("calibration incomplete: {0}")]
    CalibrationIncomplete(String),

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("arena budget exceeded at `{layer}`: need {required} bytes, capacity {capacity}")]
    BudgetExceeded {
        layer: String,
        required: usize,
        capacity: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt container: {0}")]
    Corruption(String),

    #[error("unsupported container version {0}")]
    Version(u16),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input (arguments, files, datasets)
    /// rather than by an internal or numeric failure.
    pub fn is_usage_or_data(&self) -> bool {
        matches!(
            self,
            Error::Data(_)
                | Error::NotFound(_)
                | Error::Config(_)
                | Error::Io { .. }
                | Error::Format(_)
                | Error::Corruption(_)
                | Error::Version(_)
                | Error::ShapeMismatch(_)
        )
    }
}
