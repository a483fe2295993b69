use asmbt_core::planner::PlanError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

use crate::session::Phase;

/// Errors returned by the service. Every variant maps to an HTTP status and
/// a stable `code` in the error envelope.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApiError {
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("session is {actual}, expected {expected}")]
    WrongPhase { expected: String, actual: Phase },
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("invalid disturbance: {0}")]
    InvalidDisturbance(String),
    #[error("{message}")]
    Planning { code: &'static str, message: String },
    #[error("event buffer of {0} events overflowed")]
    Overflow(usize),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::WrongPhase { .. } => "wrong_phase",
            ApiError::InvalidDocument(_) => "invalid_document",
            ApiError::InvalidDisturbance(_) => "invalid_disturbance",
            ApiError::Planning { code, .. } => code,
            ApiError::Overflow(_) => "event_overflow",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::WrongPhase { .. } => StatusCode::CONFLICT,
            ApiError::InvalidDocument(_) => StatusCode::BAD_REQUEST,
            ApiError::InvalidDisturbance(_) | ApiError::Planning { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::Overflow(_) => StatusCode::INSUFFICIENT_STORAGE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub(crate) fn wrong_phase(expected: &str, actual: Phase) -> Self {
        ApiError::WrongPhase {
            expected: expected.to_owned(),
            actual,
        }
    }

    pub fn envelope(&self) -> serde_json::Value {
        json!({"error": {"code": self.code(), "message": self.to_string()}})
    }
}

impl From<&PlanError> for ApiError {
    fn from(e: &PlanError) -> Self {
        let code = match e.root() {
            PlanError::MaxRoundsExceeded { .. } => "max_rounds_exceeded",
            PlanError::InvalidTranscript(_) => "invalid_transcript",
            PlanError::ReviewAborted(_) => "review_aborted",
            _ => "planning_failed",
        };
        ApiError::Planning {
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.envelope())).into_response()
    }
}
