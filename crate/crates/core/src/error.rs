use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A syntactically malformed line in an input file. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Well-formed input that violates a data-model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: expected {expected} sentences, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("edits cannot be applied: {0}")]
    Conflict(String),

    #[error("missing score for system `{system}`, sentence {sentence}")]
    MissingScore { system: String, sentence: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("sentence {index}: {source}")]
    AtSentence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_sentence(index: usize, err: Error) -> Self {
        match err {
            already @ Error::AtSentence { .. } => already,
            other => Error::AtSentence {
                index,
                source: Box::new(other),
            },
        }
    }

    /// True for errors caused by bad user input (flags, configs, malformed or
    /// inconsistent files) as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::LengthMismatch { .. } => true,
            Error::MissingScore { .. } => true,
            Error::Parse { .. } => true,
            Error::AtSentence { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
