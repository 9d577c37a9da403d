use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("payload size mismatch: header implies {expected} bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("invalid cube: {0}")]
    InvalidCube(String),

    #[error("malformed image file: {0}")]
    Image(String),

    #[error("{value} is not divisible by {factor}")]
    NotDivisible { value: usize, factor: usize },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("vector is not unit length (norm {0})")]
    NonUnit(f64),

    #[error("objective direction is anti-parallel to the camera axis")]
    Singular,

    #[error("direction unreachable by the mirror: {0}")]
    Unreachable(String),

    #[error("degenerate path: {0}")]
    DegeneratePath(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("seat ({patch}, {seat}) requested twice")]
    SeatCollision { patch: usize, seat: usize },

    #[error("patch does not fit a single seat: {0}")]
    Straddle(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("class {0} has no labeled pixels")]
    EmptyClass(usize),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than bad arguments.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Header(_)
                | Error::SizeMismatch { .. }
                | Error::InvalidCube(_)
                | Error::Image(_)
                | Error::Json(_)
        )
    }
}
