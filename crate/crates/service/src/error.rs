use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mixsearch_core::SessionError;
use serde::{Deserialize, Serialize};

/// Wire form of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl ApiError {
    pub fn status_and_code(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::BadCheckpoint(_) => (StatusCode::BAD_REQUEST, "bad_checkpoint"),
            ApiError::Session(e) => match e {
                SessionError::Finished => (StatusCode::CONFLICT, "session_finished"),
                SessionError::NoPending => (StatusCode::CONFLICT, "no_pending_request"),
                SessionError::KindMismatch { .. } => (StatusCode::CONFLICT, "kind_mismatch"),
                SessionError::RefNotDisplayed(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ref_not_displayed"),
                SessionError::Malformed(_) | SessionError::Relevance(_) => {
                    (StatusCode::UNPROCESSABLE_ENTITY, "malformed_feedback")
                }
                SessionError::Interaction(_) | SessionError::Agent(_) => {
                    (StatusCode::INTERNAL_SERVER_ERROR, "internal")
                }
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(ErrorBody { error: code.to_string(), detail: self.to_string() })).into_response()
    }
}
