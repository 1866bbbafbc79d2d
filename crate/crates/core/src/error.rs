use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and a layer) disagree on shape.
    #[error("shape error: {0}")]
    Shape(String),
    /// An index, range or anchor falls outside the tensor it addresses.
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("config error: {0}")]
    Config(String),
    /// A value outside the mathematical domain of an operation, e.g. a label >= num_classes.
    #[error("domain error: {0}")]
    Domain(String),
    /// API misuse such as running backward twice on one trace.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    /// Training diverged or another numeric failure occurred at runtime.
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn bounds(msg: impl Into<String>) -> Self {
        Error::Bounds(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by user-supplied configuration or inputs rather
    /// than by something that went wrong while computing.
    pub fn is_config_class(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Shape(_) | Error::Bounds(_) | Error::Domain(_)
        )
    }
}
