use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("iterate diverged at k = {k} (|theta| = {norm:e})")]
    Divergence { k: u64, norm: f64 },

    #[error("matrix is singular (smallest singular value {smallest_singular_value:e})")]
    Singular { smallest_singular_value: f64 },

    #[error("quadratic form is not positive definite (smallest eigenvalue {smallest_eigenvalue:e})")]
    Indefinite { smallest_eigenvalue: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no data rows")]
    NoData,

    #[error("all {seeds} seeds diverged")]
    AllDiverged { seeds: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused only by iterate divergence.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::AllDiverged { .. })
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
