use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A dataset or model file is missing or malformed.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Parsed data violates a structural invariant (index range, symmetry, disjoint splits).
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller passed arguments that violate an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Model or training configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// A serialized model was trained on a different dataset.
    #[error("dataset fingerprint mismatch: model has {expected}, dataset has {found}")]
    Fingerprint { expected: String, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
