use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Machine-readable failure: a stable code plus a human message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct Cause {
    pub code: String,
    pub message: String,
}

impl Cause {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), message: message.into() }
    }
}

impl From<&portrait_core::Error> for Cause {
    fn from(e: &portrait_core::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] portrait_core::Error),

    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("job {id} is {state}")]
    NotReady { id: String, state: String, cause: Option<Cause> },

    #[error("{0}")]
    Internal(String),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Core(e.into())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Core(e.into())
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use portrait_core::Error as E;
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::NotReady { .. } => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(e) => match e {
                E::InvalidInput(_)
                | E::DegenerateLandmarks(_)
                | E::OutOfRange(_)
                | E::InvalidConfig(_)
                | E::Format(_)
                | E::AudioDecode(_)
                | E::Image(_)
                | E::Json(_) => StatusCode::BAD_REQUEST,
                E::Resolution(_) => StatusCode::NOT_FOUND,
                E::Conflict(_) => StatusCode::CONFLICT,
                E::EmptyTrainingSet { .. }
                | E::ConstraintInfeasible(_)
                | E::NoFace(_)
                | E::FixtureMissing(_)
                | E::Incompatible { .. }
                | E::Overlap(_)
                | E::Stage1Failure { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                E::Backend(_) | E::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }

    pub fn cause(&self) -> Cause {
        match self {
            ServiceError::Core(e) => e.into(),
            ServiceError::BadRequest(m) => Cause::new("bad-request", m.clone()),
            ServiceError::NotFound(m) => Cause::new("not-found", m.clone()),
            ServiceError::Conflict(m) => Cause::new("conflict", m.clone()),
            ServiceError::NotReady { .. } => Cause::new("job-not-succeeded", self.to_string()),
            ServiceError::Internal(m) => Cause::new("internal", m.clone()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: Cause,
    #[serde(skip_serializing_if = "Option::is_none")]
    job_error: Option<Cause>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let job_error = match &self {
            ServiceError::NotReady { cause, .. } => cause.clone(),
            _ => None,
        };
        (self.status(), Json(ErrorBody { error: self.cause(), job_error })).into_response()
    }
}
