use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::data::fixture::FixtureError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A layer or run configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called outside its contract (empty input, non-scalar loss, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A gradient or parameter became NaN/Inf.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Wraps an error with the name of the model stage that produced it.
    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Fixture(#[from] FixtureError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Attaches a module name to errors bubbling out of a model stage.
pub(crate) trait InModule<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T> InModule<T> for Result<T> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            already @ Error::Module { .. } => already,
            other => Error::Module {
                module,
                source: Box::new(other),
            },
        })
    }
}
