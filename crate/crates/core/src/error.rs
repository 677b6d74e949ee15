use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("pose ({x:.3}, {y:.3}) is inside an obstacle")]
    PoseInObstacle { x: f64, y: f64 },

    #[error("region out of bounds: {0}")]
    OutOfBounds(String),

    #[error("world parse error at line {line}, column {column}: {message}")]
    WorldParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown built-in world {0:?}")]
    UnknownWorld(String),

    #[error("zero travelled distance")]
    ZeroTravel,

    #[error("goal unreachable")]
    Unreachable,

    #[error("config error: {0}")]
    Config(String),

    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error("schema mismatch: expected {expected} version {expected_version}, found {found} version {found_version}")]
    Schema {
        expected: &'static str,
        expected_version: u32,
        found: String,
        found_version: u32,
    },

    #[error("graymap error: {0}")]
    Graymap(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
