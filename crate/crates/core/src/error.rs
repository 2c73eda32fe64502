//! Error type shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {path}:{line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown split name {name:?} for conversation {conversation}")]
    UnknownSplit { name: String, conversation: String },

    #[error("conversation {conversation} has no split assignment")]
    MissingSplit { conversation: String },

    #[error("labels appear only in the test split: {labels:?}")]
    TestOnlyLabels { labels: Vec<String> },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("reserved token {token:?} appears in the corpus")]
    ReservedToken { token: String },

    #[error("{context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenIdOutOfRange { id: usize, size: usize },

    #[error("embedding table is frozen; cannot apply gradients")]
    FrozenEmbedding,

    #[error("label set mismatch: {message}")]
    LabelSetMismatch { message: String },

    #[error("utterance {conversation}[{position}] has no gold label")]
    MissingLabel {
        conversation: String,
        position: usize,
    },

    #[error("invalid config field {field}: {message}")]
    Config { field: String, message: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("empty input: {context}")]
    EmptyInput { context: &'static str },

    #[error("bad checkpoint file: {message}")]
    BadCheckpoint { message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with a location prefix while keeping the exit-code class.
    pub fn in_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code class: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::NonFinite { .. } => 3,
            Error::Context { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
