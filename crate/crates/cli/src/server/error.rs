use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use convis_core::encoder::EncoderError;
use convis_core::lexdb::LexError;
use convis_core::saliency::SaliencyError;
use convis_core::simcore::SimError;
use serde_json::json;

/// JSON error body `{code, message}` with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

fn from_encoder(e: EncoderError) -> ApiError {
    match e {
        EncoderError::Backend(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable", e.to_string()),
        EncoderError::Batch { source, .. } => from_encoder(*source),
        other => ApiError::internal(other.to_string()),
    }
}

fn from_sim(e: SimError) -> ApiError {
    match e {
        SimError::UnknownSynset(_) | SimError::Lex(LexError::UnknownSynset(_)) => ApiError::not_found(e.to_string()),
        SimError::InvalidK => ApiError::bad_request(e.to_string()),
        SimError::Encoder(e) => from_encoder(e),
        other => ApiError::internal(other.to_string()),
    }
}

impl From<SaliencyError> for ApiError {
    fn from(e: SaliencyError) -> Self {
        match e {
            SaliencyError::Sim(s) => from_sim(s),
            SaliencyError::Encoder(e) => from_encoder(e),
            SaliencyError::Config(_) | SaliencyError::ImageTooSmall { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        from_sim(e)
    }
}

impl From<EncoderError> for ApiError {
    fn from(e: EncoderError) -> Self {
        from_encoder(e)
    }
}
