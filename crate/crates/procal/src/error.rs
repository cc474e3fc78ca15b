use thiserror::Error;

/// Errors across the toolkit. Each variant maps to a distinct process exit
/// code so scripted callers can tell error classes apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("duplicate sample id {0}")]
    DuplicateId(i64),

    #[error("stored confidence {stored} disagrees with recomputed softmax {computed} at id {id}")]
    ConfidenceMismatch { id: i64, stored: f64, computed: f64 },

    #[error("stored pred_label {stored} disagrees with logit argmax {computed} at id {id}")]
    PredLabelMismatch { id: i64, stored: usize, computed: usize },

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLengthMismatch { expected: usize, found: usize },

    #[error("misaligned ids between predictions and embeddings")]
    MisalignedIds,

    #[error("reference too small: need at least {needed} rows, got {got}")]
    ReferenceTooSmall { needed: usize, got: usize },

    #[error("k out of range: k={k}, available={available}")]
    KOutOfRange { k: usize, available: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient samples for {context}: need at least {needed}, got {got}")]
    InsufficientSamples { context: String, needed: usize, got: usize },

    #[error("insufficient partition: {context} has {got} samples, need at least 2")]
    InsufficientPartition { context: String, got: usize },

    #[error("no confidence overlap between proximity groups; reduce the group count (e.g. --groups 3)")]
    NoConfidenceOverlap,

    #[error("missing proximity values: {0}")]
    MissingProximity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable nonzero exit code per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::Csv(_) | Error::Json(_) => 3,
            Error::MalformedHeader(_) => 4,
            Error::NonFinite(_) => 5,
            Error::LabelOutOfRange(_) => 6,
            Error::DuplicateId(_) => 7,
            Error::ConfidenceMismatch { .. } | Error::PredLabelMismatch { .. } => 8,
            Error::PayloadLengthMismatch { .. } => 9,
            Error::MisalignedIds => 10,
            Error::ReferenceTooSmall { .. } => 11,
            Error::KOutOfRange { .. } => 12,
            Error::DimensionMismatch { .. } => 13,
            Error::InsufficientSamples { .. } => 14,
            Error::InsufficientPartition { .. } => 15,
            Error::NoConfidenceOverlap => 16,
            Error::MissingProximity(_) => 17,
            Error::InvalidParameter(_) => 18,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
