use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed image: {0}")]
    Format(String),

    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(u32),

    #[error("unsupported color type: {0}")]
    UnsupportedColorType(String),

    #[error("image dimensions overflow: {width}x{height}x{channels}")]
    DimensionOverflow {
        width: u64,
        height: u64,
        channels: u64,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("expected 68 points, found {0}")]
    KeypointCount(usize),

    #[error("keypoints line {line}: cannot parse {token:?}")]
    KeypointParse { line: usize, token: String },

    #[error("{region} region is empty after clamping to {width}x{height}")]
    EmptyRegion {
        region: String,
        width: u32,
        height: u32,
    },

    #[error("occlusion requires keypoints")]
    MissingKeypoints,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("zero-norm embedding")]
    ZeroNorm,

    #[error("non-finite embedding value at index {0}")]
    NonFinite(usize),

    #[error("duplicate key {0:?}")]
    DuplicateKey(String),

    #[error("embedding store: {0}")]
    Store(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("no records for analysis subgroup {analysis:?} with control label {control:?}")]
    EmptyCell { analysis: String, control: String },

    #[error(
        "insufficient data in subgroup {subgroup:?}: need {required} {kind} pairs, only {available} available"
    )]
    InsufficientData {
        subgroup: String,
        kind: &'static str,
        required: usize,
        available: usize,
    },

    #[error("pairs file: {0}")]
    Pairs(String),

    #[error("empty score list: {0}")]
    EmptyScores(&'static str),

    #[error("need at least 2 subgroups, got {0}")]
    TooFewSubgroups(usize),

    #[error("missing {} embedding keys: {}", .0.len(), .0.join(", "))]
    MissingKeys(Vec<String>),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
