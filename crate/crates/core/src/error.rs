use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: width {w} and height {h} must be finite and positive")]
    InvalidBox { w: f64, h: f64 },

    #[error("empty annotation")]
    EmptyAnnotation,

    #[error("annotation box {found:?} does not match its mask extent {expected:?}")]
    AnnotationMismatch { found: [f64; 4], expected: [f64; 4] },

    #[error("empty crop: box does not overlap the image")]
    EmptyCrop,

    #[error("nothing to sample: no positive and no negative anchors")]
    NothingToSample,

    #[error("cannot aggregate an empty list of frame results")]
    EmptyResults,

    #[error("not a positive sequence: no frame contains a polyp")]
    NotPositiveSequence,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {what} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        what: String,
        found_w: u32,
        found_h: u32,
        expected_w: u32,
        expected_h: u32,
    },

    #[error("no frames found under {0}")]
    NoFramesFound(PathBuf),

    #[error("duplicate frame stem `{0}`")]
    DuplicateStem(String),

    #[error("unknown frame `{0}`")]
    UnknownFrame(String),

    #[error("feature dimension {found} does not match model dimension {expected}")]
    FeatureDimension { found: usize, expected: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("model file: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
