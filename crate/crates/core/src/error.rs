use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid tape: {0}")]
    Tape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {kind} file at byte {position}: {detail}")]
    Format {
        kind: &'static str,
        position: usize,
        detail: String,
    },

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("missing file {}", .0.display())]
    Missing(PathBuf),

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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
}
