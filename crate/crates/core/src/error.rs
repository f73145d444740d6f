use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} is the zero vector")]
    ZeroVector { row: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("invalid batch layout: {0}")]
    InvalidLayout(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dataset has {available} identities, batch needs {requested}")]
    InsufficientIdentities { available: usize, requested: usize },

    #[error("no valid gallery entry for any query ({queries} queries skipped)")]
    NoValidGallery { queries: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing attribute annotation: {0}")]
    MissingAnnotation(PathBuf),

    #[error("layout error in {path}: {reason}")]
    Layout { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn layout(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Layout {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
