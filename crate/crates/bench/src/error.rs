use std::path::PathBuf;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] evfi_core::Error),
    #[error("i/o error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A job directory does not follow the interchange layout.
    #[error("protocol error in {path}: {msg}")]
    Protocol { path: PathBuf, msg: String },
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("backend {backend} failed: {msg}")]
    Backend { backend: String, msg: String },
    #[error("no job produced a score")]
    NoResults,
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn protocol(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        BenchError::Protocol {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
