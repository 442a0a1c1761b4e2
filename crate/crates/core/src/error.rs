use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by panel handling, estimation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("jacobian is rank deficient in parameter block `{block}`")]
    RankDeficient { block: String },

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("unsupported option: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, got: usize, context: &'static str) -> Self {
        Error::Dimension {
            expected,
            got,
            context,
        }
    }
}
