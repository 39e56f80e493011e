use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("sequence of length {0} is too short, next-token prediction needs at least 2 tokens")]
    SequenceTooShort(usize),

    #[error("training diverged at step {step}: non-finite {what}")]
    Divergence { step: u64, what: &'static str },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("degenerate layer {layer}: all training gradients are zero (lambda = 0)")]
    DegenerateLayer { layer: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("all scores are equal; min-max scaling is undefined")]
    AllScoresEqual,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
