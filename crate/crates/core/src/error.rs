use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed DICOM stream: {0}")]
    MalformedStream(String),
    #[error("unsupported transfer syntax: {0}")]
    UnsupportedTransferSyntax(String),
    #[error("missing mandatory attribute: {0}")]
    MissingMandatoryAttribute(&'static str),
    #[error("pixel decode failure: {0}")]
    PixelDecodeFailure(String),
    #[error("empty input")]
    EmptyInput,
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("insufficient studies in stratum {0:?}")]
    InsufficientStudies(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spatial dims must be even, got {0}x{1}")]
    OddSpatialDim(usize, usize),
    #[error("batch too small for batch norm: {0}")]
    BatchTooSmall(usize),
    #[error("class index {index} out of range for {head}")]
    IndexOutOfRange { head: &'static str, index: usize },
    #[error("invalid class {0} for head {1}")]
    InvalidClass(String, &'static str),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("label map parse error at line {line}: {msg}")]
    LabelMap { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
