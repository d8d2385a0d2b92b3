use std::path::PathBuf;

use thiserror::Error;

use crate::state::StateParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A structured input file did not conform to its format.
    #[error("{file}: {message}")]
    Format { file: String, message: String },

    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },

    #[error("informable slot `{domain}.{slot}` has no candidate values")]
    EmptyValues { domain: String, slot: String },

    #[error("corpus word `{0}` collides with a special token")]
    VocabularyCollision(String),

    #[error("token id {id} out of range for vocabulary of size {len}")]
    TokenRange { id: usize, len: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(transparent)]
    StateParse(#[from] StateParseError),

    #[error("input of length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss ({0})")]
    NonFiniteLoss(String),

    #[error("dialogue `{dialogue}` turn {turn}: {message}")]
    Turn {
        dialogue: String,
        turn: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            message: message.into(),
        }
    }
}
