use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}, line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),

    #[error("language pair mismatch: `{0}` vs `{1}`")]
    LanguagePairMismatch(String, String),

    #[error("requested {requested:.4} h but the pool only holds {available:.4} h")]
    PoolTooSmall { requested: f64, available: f64 },

    #[error("audio too short: {samples} samples, one window needs {window}")]
    AudioTooShort { samples: usize, window: usize },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("target size {target} is smaller than the character inventory ({chars})")]
    VocabularyTooSmall { target: usize, chars: usize },

    #[error("shape mismatch for `{tensor}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("target of length {target_len} cannot be aligned to {frames} frames")]
    Unalignable { frames: usize, target_len: usize },

    #[error("training diverged: non-finite values in `{0}`")]
    Divergence(String),

    #[error("backward called on a graph without a recorded forward pass")]
    NoForward,

    #[error("utterance `{id}` spans {frames} frames, above the batch cap {cap}")]
    UtteranceExceedsBatch { id: String, frames: u64, cap: u64 },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("ARPA model: {0}")]
    Arpa(String),

    #[error("{0}")]
    Metric(String),

    #[error("empty lexicon")]
    EmptyLexicon,

    #[error("empty tuning grid")]
    EmptyGrid,

    #[error("unknown utterance id `{0}`")]
    UnknownId(String),

    #[error("{condition}: {source}")]
    Condition {
        condition: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        context: impl Into<String>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn checkpoint(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn in_condition(self, condition: impl Into<String>) -> Self {
        Error::Condition {
            condition: condition.into(),
            source: Box::new(self),
        }
    }
}
