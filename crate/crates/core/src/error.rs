use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum AlmError {
    #[error("empty corpus: tokenizer training needs at least one byte")]
    EmptyCorpus,

    #[error("target vocab size {0} is below the 256-byte floor")]
    VocabTooSmall(usize),

    #[error("token id {id} out of range for vocab of size {vocab_size} (position {position})")]
    TokenOutOfRange {
        id: u32,
        vocab_size: usize,
        position: usize,
    },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("sequence length {len} outside [1, {context_len}]; window the input first")]
    BadSequenceLength { len: usize, context_len: usize },

    #[error("no predictable position: need at least 2 tokens, got {0}")]
    TooShort(usize),

    #[error("questioned text too short to score")]
    QueryTooShort,

    #[error("questioned text unscorable under every model (perplexity overflow)")]
    Unscorable,

    #[error("non-finite gradient in tensor `{0}`; training aborted")]
    NonFiniteGradient(String),

    #[error("author `{0}` has no usable training data")]
    AuthorUntrainable(String),

    #[error("unknown test author `{0}`")]
    UnknownAuthor(String),

    #[error("corpus shorter than one usable window")]
    CorpusTooSmall,

    #[error("dataset has {0} author(s); attribution needs at least 2")]
    TooFewAuthors(usize),

    #[error("{path}: malformed record at line {line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: no records")]
    NoRecords { path: PathBuf },

    #[error("downsample fraction {0} must be in (0, 1]")]
    BadFraction(f64),

    #[error("downsample would empty the training set of author `{0}`")]
    DownsampleEmpties(String),

    #[error("{path}: bad file format: {reason}")]
    BadFormat { path: PathBuf, reason: String },

    #[error("{path}: truncated at byte offset {offset}")]
    Truncated { path: PathBuf, offset: usize },

    #[error("{path}: checksum mismatch; file is corrupt")]
    ChecksumMismatch { path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AlmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AlmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, AlmError>;
