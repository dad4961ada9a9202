use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Format(String),
    #[error("record contains no samples")]
    EmptyRecord,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("rejected value: {0}")]
    RejectedValue(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("signal too short: need at least {needed} samples, got {actual}")]
    TooShort { needed: usize, actual: usize },
    #[error("segmentation failed: detected {count} packets")]
    Segmentation { count: usize },
    #[error("packet {packet} has no interior local maximum")]
    NoPeak { packet: usize },
    #[error("packet {packet} has no qualifying trough after the peak")]
    NoTrough { packet: usize },
    #[error("no spectral bin above the noise threshold inside the pass band")]
    AllNoise,
    #[error("window collapsed below 3 samples in packet {packet}")]
    Window { packet: usize },
    #[error("signal frequency {frequency} Hz lies outside every decomposition band")]
    Band { frequency: f64 },
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("fold {fold} has no positive samples")]
    Stratification { fold: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("duplicate sinogram entry for rotation {rotation}, translation {translation}")]
    DuplicateEntry { rotation: usize, translation: usize },
    #[error("sinogram has no valid entries")]
    EmptyData,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input")]
    Empty,
    #[error("burst layout does not fit: {0}")]
    Layout(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("model format error: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
