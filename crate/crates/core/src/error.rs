use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("{what} {index} out of range (limit {limit})")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("volume has {nz} slices, need at least {needed}")]
    VolumeTooShort { nz: usize, needed: usize },

    #[error("missing header key `{0}`")]
    MissingKey(&'static str),

    #[error("malformed value for header key `{key}`: `{value}`")]
    MalformedHeader { key: String, value: String },

    #[error("unsupported element type `{0}`")]
    UnsupportedElementType(String),

    #[error("raw data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("raw data size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at iteration {0}")]
    Divergence(usize),

    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,

    #[error("degenerate score gradient: first/last fixed scores differ by {0}")]
    DegenerateScoreGradient(f64),

    #[error("score curve needs at least 2 points, got {0}")]
    CurveTooShort(usize),

    #[error("no shift reaches the minimum overlap of {min_overlap} samples")]
    NoFeasibleShift { min_overlap: usize },

    #[error("no grid translation reaches the minimum overlap")]
    NoFeasibleTranslation,

    #[error("score file contains no rows")]
    EmptyCurve,

    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("line {line}: z is not strictly increasing")]
    NonMonotoneZ { line: usize },

    #[error("line {line}: expected 3 fields, found {found}")]
    RowLengthMismatch { line: usize, found: usize },

    #[error("no slice at z = {0} mm in score file")]
    ScoreNotFound(f64),

    #[error("no volume is long enough for the pair protocol")]
    NoEligibleVolumes,

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_path(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Path { path, source }
    }
}
