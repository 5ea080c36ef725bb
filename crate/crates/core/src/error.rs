use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("unknown token {0:?} and the vocabulary has no unk entry")]
    UnknownToken(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid decoder spec {spec:?}: {reason}")]
    DecoderSpec { spec: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("enumeration limits exceeded: {0}")]
    LimitsExceeded(String),

    #[error("threshold {threshold} exceeds decoding cap {cap}")]
    ThresholdAboveCap { threshold: usize, cap: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
