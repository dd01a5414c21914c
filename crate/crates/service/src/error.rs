use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use relaynet_core::designer::DesignerError;
use serde::{Deserialize, Serialize};

/// JSON error body: `{"error": "<code>", "message": "..."}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), code, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<DesignerError> for ApiError {
    fn from(e: DesignerError) -> Self {
        let msg = e.to_string();
        match e {
            DesignerError::WrongPhase { .. } | DesignerError::Precondition(_) | DesignerError::NoDegradation => {
                ApiError::conflict(msg)
            }
            DesignerError::WouldOrphan(_) => ApiError::new(StatusCode::CONFLICT, "would_orphan", msg),
            DesignerError::UnknownRelay(_) | DesignerError::Qos(_) => ApiError::bad_request(msg),
            DesignerError::Campaign(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "campaign_failed", msg),
            DesignerError::Infeasible(_) | DesignerError::IterationLimit(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "infeasible", msg)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody { error: self.code.to_string(), message: self.message })).into_response()
    }
}
