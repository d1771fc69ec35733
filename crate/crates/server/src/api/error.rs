use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use farelens_core::filter::FilterError;
use farelens_provider::ProviderError;
use serde::{Deserialize, Serialize};

use crate::ingest::IngestError;
use crate::store::StoreError;
use crate::survey::SurveyError;

/// Wire form of every error: a stable `code` plus a readable message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: Vec::new(),
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "a bearer token is required",
        )
    }

    pub fn forbidden() -> Self {
        Self::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "this token cannot use this endpoint",
        )
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("{} not found", what.into()),
        )
    }

    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = ErrorBody {
            code: self.code.into(),
            message: self.message,
            details: self.details,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", msg),
            StoreError::Gone(_) => ApiError::new(StatusCode::GONE, "driver_deleted", msg),
            StoreError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", msg),
            StoreError::Refused(_) => ApiError::invalid("refused", msg),
            StoreError::Invalid(_) => ApiError::invalid("invalid", msg),
            StoreError::Io(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", msg)
            }
        }
    }
}

impl From<SurveyError> for ApiError {
    fn from(e: SurveyError) -> Self {
        let msg = e.to_string();
        match e {
            SurveyError::Refused(_) => ApiError::new(StatusCode::CONFLICT, "invite_refused", msg),
            SurveyError::Gone => ApiError::new(StatusCode::GONE, "survey_gone", msg),
            SurveyError::Conflict => ApiError::new(StatusCode::CONFLICT, "already_submitted", msg),
            SurveyError::Validation(details) => ApiError {
                details,
                ..ApiError::invalid("validation_failed", "answers are out of range")
            },
            SurveyError::Locked => ApiError::new(StatusCode::LOCKED, "summary_locked", msg),
            SurveyError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", msg),
            SurveyError::Sms(_) => ApiError::new(StatusCode::BAD_GATEWAY, "sms_failed", msg),
            SurveyError::Store(s) => s.into(),
        }
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        let msg = e.to_string();
        match e {
            ProviderError::Unavailable(_) => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable", msg)
            }
            ProviderError::NotFound(_) => ApiError::invalid("unknown_account", msg),
            ProviderError::Duplicate(_) => ApiError::new(StatusCode::CONFLICT, "conflict", msg),
            ProviderError::BadRequest(_) => ApiError::invalid("invalid", msg),
            ProviderError::Removed(_) => ApiError::new(StatusCode::GONE, "account_removed", msg),
            ProviderError::NoEndpoint => {
                ApiError::new(StatusCode::BAD_GATEWAY, "provider_error", msg)
            }
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let msg = e.to_string();
        match e {
            IngestError::BadSignature => {
                ApiError::new(StatusCode::UNAUTHORIZED, "bad_signature", msg)
            }
            IngestError::Malformed(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, "malformed_payload", msg)
            }
            IngestError::NotLinked(_) => ApiError::new(StatusCode::CONFLICT, "not_linked", msg),
            IngestError::WrongPhase { .. } => {
                ApiError::new(StatusCode::CONFLICT, "wrong_phase", msg)
            }
            IngestError::Provider(p) => p.into(),
            IngestError::Survey(s) => s.into(),
            IngestError::Store(s) => s.into(),
        }
    }
}

impl From<FilterError> for ApiError {
    fn from(e: FilterError) -> Self {
        ApiError::invalid("invalid_filter", e.to_string())
    }
}
