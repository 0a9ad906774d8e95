use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("expected a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("zero-norm vector in {context}")]
    ZeroNorm { context: String },

    #[error("n-gram order must be at least 1")]
    InvalidNGramOrder,

    #[error("reference list is empty")]
    EmptyReferences,

    #[error("duplicate video id `{0}`")]
    DuplicateVideo(String),

    #[error("video `{0}` has no captions")]
    EmptyCaptions(String),

    #[error("unknown video id `{0}`")]
    UnknownVideo(String),

    #[error("video `{video_id}` has no caption #{index}")]
    UnknownCaption { video_id: String, index: usize },

    #[error("no imported feature for `{0}`")]
    UnknownFeature(String),

    #[error("batch size {got} is below the minimum of {need}")]
    BatchTooSmall { need: usize, got: usize },

    #[error("corpus has {available} pairs, fewer than batch size {batch_size}")]
    CorpusTooSmall { available: usize, batch_size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss in term {term}")]
    NonFiniteLoss { term: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;
