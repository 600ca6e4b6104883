//! Endpoints called by experiment servers: project registration, custom
//! system messages, direct model calls, transcript download, health.

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chatbridge_core::admin::ProjectRequest;
use chatbridge_core::chat::{DirectTurn, Transcript};
use chatbridge_core::validate_project_id;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::extract::{bearer_token, Admin, JsonBody};
use crate::{ApiError, AppState};

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/new_project", post(new_project))
        .route("/project/custom_system_message", post(custom_system_message))
        .route("/llm/call", post(llm_call))
        .route("/download/chat/{pid}/{experiment_id}/{participant_id}", get(download_chat))
        .route("/health", get(health))
}

async fn new_project(
    State(state): State<AppState>,
    Admin(auth): Admin,
    JsonBody(request): JsonBody<ProjectRequest>,
) -> Result<Json<Value>, ApiError> {
    let project = state.admin.create_project(&auth, request)?;
    Ok(Json(json!({ "status": true, "project": project })))
}

#[derive(Deserialize)]
struct CustomSystemMessage {
    project_id: String,
    requested_by: String,
    system_message: String,
}

async fn custom_system_message(
    State(state): State<AppState>,
    JsonBody(body): JsonBody<CustomSystemMessage>,
) -> Result<Json<Value>, ApiError> {
    let pid = validate_project_id(&body.project_id)?;
    let record = state
        .chat
        .register_system_message(&pid, &body.requested_by, &body.system_message)?;
    Ok(Json(json!({ "status": true, "system_message_id": record.id })))
}

#[derive(Deserialize)]
struct LlmCall {
    project_id: String,
    requested_by: String,
    model: String,
    chat: Vec<DirectTurn>,
}

async fn llm_call(
    State(state): State<AppState>,
    JsonBody(body): JsonBody<LlmCall>,
) -> Result<Json<Value>, ApiError> {
    let pid = validate_project_id(&body.project_id)?;
    let response = state
        .chat
        .direct_call(&pid, &body.requested_by, &body.model, &body.chat)
        .await?;
    Ok(Json(json!({ "status": true, "response": response })))
}

async fn download_chat(
    State(state): State<AppState>,
    Path((pid, experiment_id, participant_id)): Path<(String, String, String)>,
    headers: HeaderMap,
) -> Result<Json<Transcript>, ApiError> {
    if state.settings.download_requires_token {
        state.admin.authorize(bearer_token(&headers))?;
    }
    Ok(Json(state.chat.download_chat(&pid, &experiment_id, &participant_id)?))
}

async fn health(State(state): State<AppState>) -> Response {
    let store = match state.chat.store().health_check() {
        Ok(()) => Ok(()),
        Err(e) => {
            tracing::warn!(error = %e, "store health check failed");
            Err("store is unavailable".to_owned())
        }
    };
    let registry = if state.chat.gateway().registry().is_empty() {
        Err("registry has no models".to_owned())
    } else {
        Ok(())
    };
    let label = |r: &Result<(), String>| if r.is_ok() { "ok" } else { "unavailable" };
    let mut body = json!({
        "status": "ok",
        "store": label(&store),
        "registry": label(&registry),
    });
    let failures: Vec<String> = [("store", &store), ("registry", &registry)]
        .into_iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    if failures.is_empty() {
        return Json(body).into_response();
    }
    body["status"] = json!("unavailable");
    body["code"] = json!("unhealthy");
    body["detail"] = json!(failures.join("; "));
    (StatusCode::SERVICE_UNAVAILABLE, Json(body)).into_response()
}
