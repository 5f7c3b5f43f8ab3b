use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {context}: left {left:?}, right {right:?}")]
    Shape {
        context: String,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("gradient oracle: non-finite evaluation at coordinate {coordinate}")]
    Oracle { coordinate: usize },

    #[error("label error: {0}")]
    Label(String),

    #[error("degenerate class {index}: occurrence rate {rate} must be positive")]
    DegenerateClass { index: usize, rate: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("join error: {0}")]
    Join(String),

    #[error("{path}:{line}: value {value} outside [-1, 1]")]
    Range { path: PathBuf, line: u64, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("stage order: {0}")]
    StageOrder(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            context: context.into(),
            left,
            right,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
