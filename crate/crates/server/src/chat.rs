//! Participant chat endpoints used by the embedded chat page. Every route
//! takes the session parameters from the query string.
//!
//! `POST /chat/message` answers with server-sent events:
//!
//! ```text
//! event: token
//! data: {"delta":"ECH"}
//!
//! event: done
//! data: {"message_id":"…","content":"ECHO: hi"}
//! ```
//!
//! or, when the provider fails, a final `error` event carrying
//! `{"code","detail"}`.

use std::convert::Infallible;

use axum::extract::{Multipart, State};
use axum::http::HeaderValue;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chatbridge_core::chat::SessionView;
use chatbridge_core::domain::BlobId;
use chatbridge_core::TurnEvent;
use futures::StreamExt;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::extract::{JsonBody, SessionQuery};
use crate::{ApiError, AppState};

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/open", post(open))
        .route("/message", post(message))
        .route("/image", post(image))
        .route("/history", get(history))
}

/// `Content-Security-Policy` value limiting which pages may frame the chat.
pub fn frame_ancestors(origins: &[String]) -> HeaderValue {
    let sources = if origins.is_empty() {
        "*".to_owned()
    } else {
        let mut sources = vec!["'self'"];
        sources.extend(origins.iter().map(String::as_str));
        sources.join(" ")
    };
    HeaderValue::from_str(&format!("frame-ancestors {sources}"))
        .unwrap_or_else(|_| HeaderValue::from_static("frame-ancestors 'self'"))
}

async fn open(State(state): State<AppState>, SessionQuery(params): SessionQuery) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.chat.open_session(&params).await?))
}

async fn history(State(state): State<AppState>, SessionQuery(params): SessionQuery) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.chat.history(&params)?))
}

#[derive(Deserialize)]
struct MessageBody {
    #[serde(default)]
    text: String,
    #[serde(default)]
    image_id: Option<BlobId>,
}

fn frame(event: TurnEvent) -> Event {
    let (name, data) = match event {
        TurnEvent::Delta(delta) => ("token", json!({ "delta": delta })),
        TurnEvent::Done(message) => ("done", json!({ "message_id": message.message_id, "content": message.content })),
        TurnEvent::Failed { error, .. } => {
            let api = ApiError::from(&error);
            ("error", json!({ "code": api.code, "detail": api.detail }))
        }
    };
    Event::default().event(name).data(data.to_string())
}

async fn message(
    State(state): State<AppState>,
    SessionQuery(params): SessionQuery,
    JsonBody(body): JsonBody<MessageBody>,
) -> Result<Response, ApiError> {
    let turn = state
        .chat
        .post_user_message(&params, &body.text, body.image_id.as_ref())
        .await?;
    let frames = turn.map(|event| Ok::<_, Infallible>(frame(event)));
    Ok(Sse::new(frames).keep_alive(KeepAlive::default()).into_response())
}

async fn image(
    State(state): State<AppState>,
    SessionQuery(params): SessionQuery,
    mut multipart: Multipart,
) -> Result<Json<Value>, ApiError> {
    let multipart_error = |e: axum::extract::multipart::MultipartError| {
        ApiError::new(e.status(), "invalid_upload", e.body_text())
    };
    while let Some(field) = multipart.next_field().await.map_err(multipart_error)? {
        if field.name() != Some("image") && field.file_name().is_none() {
            continue;
        }
        let media_type = field.content_type().unwrap_or("application/octet-stream").to_owned();
        let payload = field.bytes().await.map_err(multipart_error)?;
        let blob = state.chat.upload_image(&params, &payload, &media_type)?;
        return Ok(Json(json!({
            "image_id": blob.id,
            "media_type": blob.media_type,
            "byte_length": blob.byte_length,
        })));
    }
    Err(ApiError::bad_request("invalid_upload", "multipart body has no `image` field"))
}
