use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {token} out of vocabulary (size {vocab_size})")]
    TokenOutOfVocab { token: u32, vocab_size: usize },

    #[error("no room to generate: prompt length {prompt_len} leaves no space under max_seq_len {max_seq_len}")]
    NoRoomToGenerate {
        prompt_len: usize,
        max_seq_len: usize,
    },

    #[error("unknown word `{0}` (not in vocabulary)")]
    UnknownWord(String),

    #[error("insufficient pool for category {category}: need {needed}, have {available}")]
    InsufficientPool {
        category: String,
        needed: usize,
        available: usize,
    },

    #[error("unknown reference `{0}`")]
    UnknownReference(String),

    #[error("non-finite loss {context}")]
    NonFiniteLoss { context: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint digest mismatch (file corrupted)")]
    DigestMismatch,

    #[error("checkpoint format version {found_major}.{found_minor} is not supported (reader is {major}.x)")]
    VersionMismatch {
        found_major: u16,
        found_minor: u16,
        major: u16,
    },

    #[error("malformed {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn parse(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
