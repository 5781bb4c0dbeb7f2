use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("model {path} does not expose classifier weights: {message}")]
    MissingClassifierWeights { path: PathBuf, message: String },

    #[error("unsupported model {path}: {message}")]
    UnsupportedModel { path: PathBuf, message: String },

    #[error("onnx runtime error: {0}")]
    Onnx(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class index {index} out of range for {count} classes")]
    ClassOutOfRange { index: usize, count: usize },

    #[error("grid is {rows}x{cols}; local maxima need at least 3x3")]
    GridTooSmall { rows: usize, cols: usize },

    #[error("patch centre ({cx}, {cy}) lies outside {width}x{height} image")]
    CenterOutside {
        cx: u32,
        cy: u32,
        width: u32,
        height: u32,
    },

    #[error("region has zero area")]
    ZeroArea,

    #[error("patch side {side} exceeds image {width}x{height}")]
    PatchTooLarge { side: u32, width: u32, height: u32 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training data has a single class ({0})")]
    SingleClass(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing file referenced by manifest: {0}")]
    MissingFile(PathBuf),

    #[error("corrupt binary file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
