use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: invalid triple")]
    InvalidTriple { line: usize },

    #[error("line {line}: invalid record: {reason}")]
    InvalidRecord { line: usize, reason: String },

    #[error("no keyword matched ontology")]
    NoSeedMatched,

    #[error("insufficient noun phrases: found {found}, need at least 2")]
    InsufficientNounPhrases { found: usize },

    #[error("source length {len} exceeds max_len {max_len}")]
    SourceTooLong { len: usize, max_len: usize },

    #[error("cannot split {records} records into {k} folds")]
    InvalidFolds { k: usize, records: usize },

    #[error("invalid injection plan: {0}")]
    InvalidPlan(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("invalid syntax reference: {0}")]
    InvalidReference(String),

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("beam collapsed after {steps} steps with {finished} finished hypotheses")]
    BeamCollapse { steps: usize, finished: usize },

    #[error("usage: {0}")]
    Usage(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
