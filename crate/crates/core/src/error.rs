use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the greenwashing-risk pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },

    #[error("{path}: file is not valid UTF-8")]
    NotUtf8 { path: PathBuf },

    #[error("empty lexicon")]
    EmptyLexicon,

    #[error("invalid lexicon phrase {phrase:?}: {reason}")]
    InvalidPhrase {
        phrase: String,
        reason: &'static str,
    },

    #[error("{context}, line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("duplicate chunk id {0}")]
    DuplicateId(String),

    #[error("unresolvable attribute {attribute} for chunk {chunk}")]
    UnresolvableAttribute {
        chunk: String,
        attribute: &'static str,
    },

    #[error("underdetermined fit: {got} exemplars, at least {need} required")]
    UnderdeterminedFit { got: usize, need: usize },

    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error("invalid value: {0}")]
    InvalidInput(String),

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),

    #[error("no climate-related chunks")]
    NoClimateChunks,

    #[error("{0}")]
    Empty(&'static str),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// True when the error was caused by bad input rather than a fault in the tool.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Write { .. } | Error::Internal(_))
    }

    pub(crate) fn read(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Read {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
