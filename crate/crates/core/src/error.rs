use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(String),

    #[error("crop constraint infeasible: {0}")]
    ConstraintInfeasible(String),

    #[error("no usable face survived preprocessing ({skipped} image(s) skipped)")]
    EmptyTrainingSet { skipped: usize },

    #[error("no face found in {0}")]
    NoFace(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("resolution failed: {0}")]
    Resolution(String),

    #[error("fixture missing: {0}")]
    FixtureMissing(String),

    #[error("adapter incompatible with tensor `{tensor}`: {detail}")]
    Incompatible { tensor: String, detail: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("face masks overlap: {0}")]
    Overlap(String),

    #[error("stage-1 face generation failed after {attempts} attempt(s)")]
    Stage1Failure { attempts: u32 },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("audio decode failed: {0}")]
    AudioDecode(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("adapter format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable cause, used in job records and HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::DegenerateLandmarks(_) => "degenerate-landmarks",
            Error::ConstraintInfeasible(_) => "constraint-infeasible",
            Error::EmptyTrainingSet { .. } => "empty-training-set",
            Error::NoFace(_) => "no-face",
            Error::Conflict(_) => "conflict",
            Error::Resolution(_) => "resolution",
            Error::FixtureMissing(_) => "fixture-missing",
            Error::Incompatible { .. } => "incompatible",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Overlap(_) => "overlap",
            Error::Stage1Failure { .. } => "stage1-failure",
            Error::OutOfRange(_) => "out-of-range",
            Error::AudioDecode(_) => "audio-decode",
            Error::Backend(_) => "backend",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }
}
