//! Error taxonomy for the whole pipeline.
//!
//! Four domains, one umbrella. The CLI maps the umbrella onto exit codes:
//! transcode, phoneme and data errors are problems with inputs (exit 3),
//! model errors are problems with weights, shapes or numerics (exit 4).

use thiserror::Error;

/// Malformed or semantically invalid transcode programs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscodeError {
    /// Token stream violates the grammar. `position` indexes the offending
    /// token; `expected` describes the acceptable token set at that point.
    #[error("syntax error at token {position}: expected {expected}, found `{found}`")]
    Syntax {
        position: usize,
        expected: String,
        found: String,
    },

    /// Entity token absent from the menu in the role it appears in.
    #[error("unknown entity `{token}` ({context})")]
    UnknownEntity { token: String, context: String },

    /// Word sequence that greedy longest-match tokenization cannot cover.
    #[error("cannot tokenize `{text}` at word {position}: no vocabulary entry starts here")]
    Untokenizable { text: String, position: usize },

    /// Programs must contain at least one clause.
    #[error("a transcode program must contain at least one clause")]
    EmptyProgram,

    /// Reducer found no open line for a delete or update to act on.
    #[error("{action} has no line to act on: `{item}` is not in the order")]
    MissingLine { action: String, item: String },

    /// Quantity token outside the representable range for its position.
    #[error("quantity {value} not allowed here: {rule}")]
    BadQuantity { value: u32, rule: String },
}

/// Problems in the phoneme domain: alphabet, lexicon, noise model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhonemeError {
    #[error("word `{word}` has no lexicon entry")]
    OutOfLexicon { word: String },

    #[error("symbol `{symbol}` is not in the alphabet")]
    UnknownSymbol { symbol: String },

    #[error("id {id} does not name a phoneme or special symbol")]
    UnknownId { id: u32 },

    #[error("noise rate {name}={value} outside [0, 0.5)")]
    BadRate { name: &'static str, value: f64 },

    /// Corruption kept deleting every symbol; the retry budget ran out.
    #[error("noise model degenerate: produced only empty sequences after {retries} retries")]
    DegenerateNoise { retries: usize },
}

/// Problems with files and configs consumed or produced by the pipeline.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("menu: {0}")]
    Menu(String),

    #[error("{path}:{line}: {msg}")]
    Dataset {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Problems inside the numeric stack: shapes, weights, divergence.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected shape {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("source length {len} exceeds the model maximum {max}")]
    SourceTooLong { len: usize, max: usize },

    #[error("non-finite {what} detected in `{context}`")]
    NonFinite { what: &'static str, context: String },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("{side} vocabulary mismatch: checkpoint hash {expected}, supplied hash {got}")]
    VocabMismatch {
        side: &'static str,
        expected: String,
        got: String,
    },

    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    CorruptCheckpoint { offset: u64, reason: String },

    #[error("parallel execution detected inside a single-thread measurement section")]
    ThreadModeViolation,

    #[error("model config: {0}")]
    BadConfig(String),
}

/// Umbrella error for library entry points that cross domains.
#[derive(Debug, Error)]
pub enum BabylonError {
    #[error(transparent)]
    Transcode(#[from] TranscodeError),
    #[error(transparent)]
    Phoneme(#[from] PhonemeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl BabylonError {
    /// CLI exit code: 3 for input/data problems, 4 for model problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            BabylonError::Model(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for BabylonError {
    fn from(e: std::io::Error) -> Self {
        BabylonError::Data(DataError::Io(e))
    }
}
