use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("backward requires a scalar loss, got {len} values")]
    NotScalar { len: usize },

    #[error("tensor does not belong to this tape")]
    DetachedTensor,

    #[error("empty sequence")]
    EmptySequence,

    #[error("word has no characters")]
    EmptyCharacters,

    #[error("empty sentence")]
    EmptySentence,

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },

    #[error("line {line}: bad FEATS entry {feat:?}")]
    BadFeats { line: usize, feat: String },

    #[error("line {line}: expected {expected} dimensions, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate word {word:?}")]
    DuplicateWord { line: usize, word: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("loss diverged at epoch {epoch}, batch {batch}: {loss}")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("no OOV targets in input")]
    NoOovTargets,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad input data rather than bad invocation.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}
