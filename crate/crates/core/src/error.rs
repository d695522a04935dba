use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("malformed checkpoint header: {0}")]
    Header(String),

    #[error("missing {0} checkpoint")]
    MissingCheckpoint(&'static str),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("png error in {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI exit contract.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite { .. } => "non_finite",
            Error::BadMagic => "not_a_checkpoint",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::CheckpointShape(_) => "shape_mismatch",
            Error::Truncated(_) => "truncated",
            Error::Header(_) => "bad_header",
            Error::MissingCheckpoint(_) => "missing_checkpoint",
            Error::Dataset(_) => "dataset",
            Error::Config(_) => "config",
            Error::Png { .. } => "png",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
