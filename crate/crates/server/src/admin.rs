//! `/admin/*`: login, project management, conversation search and export.
//! Everything except login needs `Authorization: Bearer <token>`.

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use chatbridge_core::admin::{AdminSession, Page, PageRequest, ProjectRequest, DEFAULT_PAGE_SIZE};
use chatbridge_core::domain::{BlobId, SystemMessageRecord};
use chatbridge_core::store::{ConversationFilter, ConversationSummary};
use chatbridge_core::{validate_project_id, ConversationKey, Project, ProjectId};
use serde::{Deserialize, Deserializer};
use serde_json::{json, Value};

use crate::extract::{bearer_token, Admin, JsonBody};
use crate::{ApiError, AppState};

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/login", post(login))
        .route("/logout", post(logout))
        .route("/registry", get(registry))
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{pid}", get(get_project))
        .route("/projects/{pid}/active", put(set_active))
        .route("/projects/{pid}/system_message", put(set_system_message))
        .route("/projects/{pid}/provider_backend", put(set_provider_backend))
        .route("/projects/{pid}/settings", patch(update_settings))
        .route("/projects/{pid}/system_messages", get(system_messages))
        .route("/conversations", get(list_conversations))
        .route("/conversations/{conversation_id}", get(export_conversation))
        .route("/blobs/{id}", get(blob))
}

#[derive(Deserialize)]
struct Login {
    email: String,
    password: String,
}

async fn login(State(state): State<AppState>, JsonBody(body): JsonBody<Login>) -> Result<Json<AdminSession>, ApiError> {
    Ok(Json(state.admin.login(&body.email, &body.password)?))
}

async fn logout(State(state): State<AppState>, Admin(_): Admin, headers: HeaderMap) -> Json<Value> {
    if let Some(token) = bearer_token(&headers) {
        state.admin.logout(token);
    }
    Json(json!({ "status": true }))
}

/// Model aliases and provider names; credentials are never listed.
async fn registry(State(state): State<AppState>, Admin(_): Admin) -> Json<Value> {
    let registry = state.chat.gateway().registry();
    let models: Vec<Value> = registry
        .models()
        .map(|m| {
            json!({
                "alias": m.alias,
                "provider_backend": m.provider_backend,
                "supports_vision": m.supports_vision,
                "supports_streaming": m.supports_streaming,
            })
        })
        .collect();
    let providers: Vec<&str> = registry.providers().map(|p| p.name.as_str()).collect();
    Json(json!({ "providers": providers, "models": models }))
}

fn pid(raw: &str) -> Result<ProjectId, ApiError> {
    Ok(validate_project_id(raw)?)
}

async fn list_projects(State(state): State<AppState>, Admin(auth): Admin) -> Result<Json<Vec<Project>>, ApiError> {
    Ok(Json(state.admin.list_projects(&auth)?))
}

async fn create_project(
    State(state): State<AppState>,
    Admin(auth): Admin,
    JsonBody(request): JsonBody<ProjectRequest>,
) -> Result<Json<Value>, ApiError> {
    let project = state.admin.create_project(&auth, request)?;
    Ok(Json(json!({ "status": true, "project": project })))
}

async fn get_project(
    State(state): State<AppState>,
    Admin(auth): Admin,
    Path(raw): Path<String>,
) -> Result<Json<Project>, ApiError> {
    Ok(Json(state.admin.get_project(&auth, &pid(&raw)?)?))
}

#[derive(Deserialize)]
struct Active {
    active: bool,
}

async fn set_active(
    State(state): State<AppState>,
    Admin(auth): Admin,
    Path(raw): Path<String>,
    JsonBody(body): JsonBody<Active>,
) -> Result<Json<Project>, ApiError> {
    Ok(Json(state.admin.set_project_active(&auth, &pid(&raw)?, body.active)?))
}

#[derive(Deserialize)]
struct SystemMessage {
    system_message: String,
}

async fn set_system_message(
    State(state): State<AppState>,
    Admin(auth): Admin,
    Path(raw): Path<String>,
    JsonBody(body): JsonBody<SystemMessage>,
) -> Result<Json<Project>, ApiError> {
    Ok(Json(state.admin.update_system_message(&auth, &pid(&raw)?, &body.system_message)?))
}

#[derive(Deserialize)]
struct ProviderBackend {
    provider_backend: String,
}

async fn set_provider_backend(
    State(state): State<AppState>,
    Admin(auth): Admin,
    Path(raw): Path<String>,
    JsonBody(body): JsonBody<ProviderBackend>,
) -> Result<Json<Project>, ApiError> {
    Ok(Json(state.admin.set_provider_backend(&auth, &pid(&raw)?, &body.provider_backend)?))
}

/// Distinguishes an absent field from an explicit `null`.
fn present<'de, D, T>(deserializer: D) -> Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(deserializer).map(Some)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    #[serde(default)]
    assistant_first: Option<bool>,
    /// `null` removes the limit.
    #[serde(default, deserialize_with = "present")]
    max_turns: Option<Option<u32>>,
}

async fn update_settings(
    State(state): State<AppState>,
    Admin(auth): Admin,
    Path(raw): Path<String>,
    JsonBody(body): JsonBody<Settings>,
) -> Result<Json<Project>, ApiError> {
    Ok(Json(state.admin.update_settings(&auth, &pid(&raw)?, body.assistant_first, body.max_turns)?))
}

async fn system_messages(
    State(state): State<AppState>,
    Admin(auth): Admin,
    Path(raw): Path<String>,
) -> Result<Json<Vec<SystemMessageRecord>>, ApiError> {
    Ok(Json(state.admin.list_system_messages(&auth, &pid(&raw)?)?))
}

#[derive(Deserialize)]
struct ConversationQuery {
    project_id: Option<String>,
    model: Option<String>,
    participant_id: Option<String>,
    experiment_id: Option<String>,
    conversation_id: Option<String>,
    /// Case-insensitive substring of any message.
    q: Option<String>,
    #[serde(default)]
    page: usize,
    page_size: Option<usize>,
}

fn non_empty(value: Option<String>) -> Option<String> {
    value.filter(|v| !v.is_empty())
}

impl ConversationQuery {
    fn filter(self) -> Result<(ConversationFilter, PageRequest), ApiError> {
        let filter = ConversationFilter {
            project_id: non_empty(self.project_id).map(|p| pid(&p)).transpose()?,
            model: non_empty(self.model),
            participant_id: non_empty(self.participant_id),
            experiment_id: non_empty(self.experiment_id),
            conversation_key: non_empty(self.conversation_id)
                .map(|id| ConversationKey::from_conversation_id(&id))
                .transpose()?,
            text_query: non_empty(self.q),
        };
        let page = PageRequest {
            page: self.page,
            page_size: self.page_size.unwrap_or(DEFAULT_PAGE_SIZE),
        };
        Ok((filter, page))
    }
}

async fn list_conversations(
    State(state): State<AppState>,
    Admin(auth): Admin,
    query: Result<Query<ConversationQuery>, QueryRejection>,
) -> Result<Json<Page<ConversationSummary>>, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::new(e.status(), "invalid_query", e.body_text()))?;
    let (filter, page) = query.filter()?;
    Ok(Json(state.admin.list_conversations(&auth, &filter, page)?))
}

async fn export_conversation(
    State(state): State<AppState>,
    Admin(auth): Admin,
    Path(conversation_id): Path<String>,
) -> Result<Response, ApiError> {
    let key = ConversationKey::from_conversation_id(&conversation_id)?;
    let document = state.admin.export_conversation(&auth, &key)?;
    let disposition = format!("attachment; filename=\"{conversation_id}.json\"");
    Ok((
        [(header::CONTENT_TYPE, "application/json".to_owned()), (header::CONTENT_DISPOSITION, disposition)],
        document,
    )
        .into_response())
}

async fn blob(
    State(state): State<AppState>,
    Admin(auth): Admin,
    Path(raw): Path<String>,
) -> Result<Response, ApiError> {
    let id: BlobId = raw
        .parse()
        .map_err(|_| ApiError::new(axum::http::StatusCode::NOT_FOUND, "unknown_blob", "unknown blob"))?;
    let (meta, payload) = state.admin.get_blob(&auth, &id)?;
    Ok(([(header::CONTENT_TYPE, meta.media_type)], payload).into_response())
}
