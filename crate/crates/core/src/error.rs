use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}, column {column}: {reason}")]
    MalformedRow {
        line: usize,
        column: String,
        reason: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("session is empty after validation")]
    EmptySession,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid axis mapping: {0}")]
    InvalidMapping(String),
    #[error("both eyes have zero confidence")]
    NoValidEye,
    #[error("point coincides with the cone apex")]
    DegeneratePoint,
    #[error("scene has no points")]
    EmptyScene,
    #[error("inputs are misaligned: {0}")]
    MisalignedInputs(String),
    #[error("ROI map has no effective cubes")]
    EmptyMap,
    #[error("series is empty")]
    EmptySeries,
    #[error("sample rate is not uniform: jitter {jitter:.6}s exceeds {limit:.6}s")]
    NonUniformRate { jitter: f64, limit: f64 },
    #[error("scene needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}: {diagnostics}")]
    NonFiniteLoss { epoch: usize, diagnostics: String },
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} history steps, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("prediction has {predicted} frames but scene expects {expected}")]
    FrameMismatch { predicted: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("PLY error: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
