use thiserror::Error;

#[derive(Debug, Error)]
pub enum RksError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate scale: all pooled points coincide after centering")]
    DegenerateScale,

    #[error("empirical discrepancy is exactly zero; log objective undefined")]
    ZeroDiscrepancy,

    #[error("degree k = {0} is not supported here")]
    UnsupportedDegree(u32),

    #[error("network has zero path seminorm")]
    ZeroSeminorm,

    #[error("instance too large: {size} points exceeds limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("empty input")]
    EmptyInput,

    #[error("empty grid")]
    EmptyGrid,

    #[error("covariance is not positive semidefinite (jitter reached {jitter:e})")]
    NotPsd { jitter: f64 },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid setting: {0}")]
    InvalidSpec(String),

    #[error("unknown setting `{0}`")]
    UnknownSetting(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RksError {
    /// True for errors caused by input data rather than by how the library was called.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            RksError::Parse { .. }
                | RksError::Io(_)
                | RksError::InvalidSample(_)
                | RksError::DimensionMismatch { .. }
                | RksError::DegenerateScale
                | RksError::TooFewSamples(_)
                | RksError::TooLarge { .. }
                | RksError::EmptyInput
        )
    }
}

pub type Result<T> = std::result::Result<T, RksError>;
