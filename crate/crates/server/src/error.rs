//! Error bodies. Every failure leaves the server as `{"code", "detail"}`
//! with a stable snake_case code.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chatbridge_core::{AdminError, ChatError, DomainError, ProviderError, StoreError};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            code,
            detail: detail.into(),
        }
    }

    pub fn bad_request(code: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

fn domain(error: &DomainError) -> ApiError {
    let code = match error {
        DomainError::InvalidProjectId { .. } => "invalid_project_id",
        DomainError::MissingParameter(_) => "missing_parameter",
        DomainError::MalformedBoolean { .. } => "malformed_boolean",
        DomainError::DuplicateParameter(_) => "duplicate_parameter",
        DomainError::InvalidParameter { .. } => "invalid_parameter",
        DomainError::InvalidEmail => "invalid_email",
        DomainError::MalformedConversationId => "malformed_conversation_id",
    };
    ApiError::bad_request(code, error.to_string())
}

fn provider(error: &ProviderError) -> ApiError {
    let (status, code) = match error {
        ProviderError::UnknownModel { .. } => (StatusCode::NOT_FOUND, "unknown_model"),
        ProviderError::VisionUnsupported(_) => (StatusCode::UNPROCESSABLE_ENTITY, "vision_unsupported"),
        ProviderError::UnsupportedMediaType(_) => (StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type"),
        ProviderError::EmptyConversation => (StatusCode::BAD_REQUEST, "empty_conversation"),
        ProviderError::MissingCredential(_) => (StatusCode::BAD_GATEWAY, "provider_misconfigured"),
        ProviderError::Unavailable(_) => (StatusCode::BAD_GATEWAY, "provider_unavailable"),
        ProviderError::Rejected { .. } => (StatusCode::BAD_GATEWAY, "provider_rejected"),
    };
    ApiError::new(status, code, error.to_string())
}

fn store(error: &StoreError) -> ApiError {
    match error {
        StoreError::BlobTooLarge { .. } => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "blob_too_large", error.to_string()),
        StoreError::UnsupportedMediaType(_) => {
            ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type", error.to_string())
        }
        StoreError::UnknownProject(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_project", error.to_string()),
        StoreError::UnknownBlob(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_blob", error.to_string()),
        StoreError::DuplicateProjectId(_) => ApiError::new(StatusCode::CONFLICT, "duplicate_project", error.to_string()),
        other => {
            // paths and OS messages stay in the log
            tracing::error!(error = %other, "storage failure");
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", "storage is unavailable")
        }
    }
}

impl From<&ChatError> for ApiError {
    fn from(error: &ChatError) -> Self {
        let detail = error.to_string();
        match error {
            ChatError::UnknownProject(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_project", detail),
            ChatError::ProjectInactive(_) => ApiError::new(StatusCode::FORBIDDEN, "project_inactive", detail),
            ChatError::UnknownModel { .. } => ApiError::new(StatusCode::NOT_FOUND, "unknown_model", detail),
            ChatError::UnknownSystemMessageId(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_system_message_id", detail)
            }
            ChatError::GenerationInFlight => ApiError::new(StatusCode::CONFLICT, "generation_in_flight", detail),
            ChatError::ImageUploadDisabled => ApiError::new(StatusCode::FORBIDDEN, "image_upload_disabled", detail),
            ChatError::VisionUnsupported(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "vision_unsupported", detail)
            }
            ChatError::UnknownImage(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_image", detail),
            ChatError::TurnLimitReached(_) => ApiError::new(StatusCode::CONFLICT, "turn_limit_reached", detail),
            ChatError::EmptyMessage => ApiError::bad_request("empty_message", detail),
            ChatError::Invalid(e) => domain(e),
            ChatError::Provider(e) => provider(e),
            ChatError::Store(e) => store(e),
        }
    }
}

impl From<ChatError> for ApiError {
    fn from(error: ChatError) -> Self {
        Self::from(&error)
    }
}

impl From<AdminError> for ApiError {
    fn from(error: AdminError) -> Self {
        let detail = error.to_string();
        match &error {
            AdminError::AuthRequired => ApiError::new(StatusCode::UNAUTHORIZED, "auth_required", detail),
            AdminError::InvalidCredentials => ApiError::new(StatusCode::UNAUTHORIZED, "invalid_credentials", detail),
            AdminError::UnknownProject(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_project", detail),
            AdminError::DuplicateProject(_) => ApiError::new(StatusCode::CONFLICT, "duplicate_project", detail),
            AdminError::UnknownConversation => ApiError::new(StatusCode::NOT_FOUND, "unknown_conversation", detail),
            AdminError::UnknownProviderBackend(_) => ApiError::bad_request("unknown_provider_backend", detail),
            AdminError::UnknownBlob(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_blob", detail),
            AdminError::Invalid(e) => domain(e),
            AdminError::Store(e) => store(e),
        }
    }
}

impl From<DomainError> for ApiError {
    fn from(error: DomainError) -> Self {
        domain(&error)
    }
}
