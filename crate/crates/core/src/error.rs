use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embedding has zero norm")]
    ZeroNorm,

    #[error("embedding must have at least one component")]
    EmptyEmbedding,

    #[error("non-finite value encountered")]
    NonFinite,

    #[error("batch needs at least two identities, got P = {0}")]
    TooFewIdentities(usize),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("identity {identity} has {available} {modality} samples, {required} required")]
    InsufficientSamples {
        identity: usize,
        modality: &'static str,
        available: usize,
        required: usize,
    },

    #[error("dataset has {available} usable identities, {required} required")]
    InsufficientIdentities { available: usize, required: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("epoch {epoch} out of range for a {epochs}-epoch schedule")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("query identity {0} has no match in the gallery")]
    MissingGalleryIdentity(usize),

    #[error("queries and gallery must come from opposite modalities")]
    SameModality,

    #[error("ranking has no relevant item")]
    NoRelevantItem,

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("malformed PPM at byte {offset}: {reason}")]
    Ppm { offset: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
