use std::path::PathBuf;

/// Errors produced by the discovery pipeline and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt feature file: {0}")]
    Corrupt(String),

    #[error("non-finite feature value at linear index {index}")]
    NonFinite { index: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("eigensolver failed to converge (residual {residual:e})")]
    Solver { residual: f64 },

    #[error("logic error: {0}")]
    Logic(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
