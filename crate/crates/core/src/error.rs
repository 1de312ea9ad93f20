use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },

    #[error("explanation has no positive mass; the alignment ratio is undefined")]
    EmptyExplanation,

    #[error("no correctly classified images; average score is undefined")]
    NoCorrectClassifications,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad magic bytes in model file")]
    BadMagic,

    #[error("model format version {0} is not supported")]
    VersionUnsupported(u16),

    #[error("layer {0} is not a convolution")]
    NotAConvLayer(usize),

    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("malformed data in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(left: impl std::fmt::Display, right: impl std::fmt::Display) -> Self {
        Error::ShapeMismatch {
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
