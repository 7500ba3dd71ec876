use std::path::PathBuf;

/// Errors raised by the model, inference and data layers.
#[derive(Debug, thiserror::Error)]
pub enum NvkmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gram matrix of {size} points is not positive definite (last jitter {jitter:e})")]
    IllConditionedGram { size: usize, jitter: f64 },

    #[error("numeric inconsistency: {0}")]
    NumericInconsistency(String),

    #[error("unsupported Volterra order {0} (supported: 1 to 4)")]
    UnsupportedOrder(usize),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("output `{0}` has no observations")]
    EmptySeries(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NvkmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NvkmError::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        NvkmError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NvkmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, NvkmError>;
