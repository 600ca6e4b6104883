//! Shared harness: runs the real router on 127.0.0.1:0 and talks to it
//! over HTTP.
#![allow(dead_code)]

use std::sync::Arc;

use chatbridge_core::provider::SseDecoder;
use chatbridge_core::{AdminCredentials, MemoryStore, Registry, SessionParameters, Store};
use chatbridge_server::{app, AppState, HttpSettings};
use reqwest::StatusCode;
use serde_json::{json, Value};

pub const ADMIN_EMAIL: &str = "admin@lab.org";
pub const ADMIN_PASSWORD: &str = "correct horse battery staple";

pub const REGISTRY: &str = r#"{
  "providers": [{"name": "mock", "wire_protocol": "mock"}],
  "models": [
    {"alias": "gpt4o", "provider_backend": "mock", "remote_model_name": "scripted",
     "mock": {"behavior": "scripted", "replies": [
        "It sounds like this belief matters to you. What first made it seem convincing?",
        "Investigations found no evidence supporting that claim.",
        "Thanks for talking this through with me."]}},
    {"alias": "mock-echo", "provider_backend": "mock", "remote_model_name": "echo",
     "mock": {"behavior": "echo", "chunk_size": 3}},
    {"alias": "mock-stream", "provider_backend": "mock", "remote_model_name": "echo"},
    {"alias": "mock-vision", "provider_backend": "mock", "remote_model_name": "echo",
     "supports_vision": true},
    {"alias": "mock-text", "provider_backend": "mock", "remote_model_name": "echo"},
    {"alias": "mock-delay", "provider_backend": "mock", "remote_model_name": "delay",
     "mock": {"behavior": "delay", "delay_ms": 100}},
    {"alias": "mock-slow", "provider_backend": "mock", "remote_model_name": "delay",
     "mock": {"behavior": "delay", "delay_ms": 800}},
    {"alias": "mock-fault", "provider_backend": "mock", "remote_model_name": "fault",
     "mock": {"behavior": "fault", "after_chunks": 2}},
    {"alias": "model-0", "provider_backend": "mock", "remote_model_name": "echo"},
    {"alias": "model-1", "provider_backend": "mock", "remote_model_name": "echo"},
    {"alias": "model-2", "provider_backend": "mock", "remote_model_name": "echo"},
    {"alias": "model-3", "provider_backend": "mock", "remote_model_name": "echo"}
  ]
}"#;

pub struct Server {
    pub base: String,
    pub state: AppState,
    pub client: reqwest::Client,
}

/// One parsed server-sent event.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub event: String,
    pub data: Value,
}

impl Server {
    pub async fn start() -> Self {
        Self::start_with(Arc::new(MemoryStore::new()), REGISTRY, HttpSettings::default()).await
    }

    pub async fn start_with(store: Arc<dyn Store>, registry: &str, settings: HttpSettings) -> Self {
        let state = AppState::builder(store, Registry::from_json(registry).unwrap())
            .credentials(Some(AdminCredentials::new(ADMIN_EMAIL, ADMIN_PASSWORD)))
            .settings(settings)
            .build();
        Self::serve(state).await
    }

    pub async fn serve(state: AppState) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let router = app(state.clone());
        let listener = axum::serve::ListenerExt::tap_io(listener, |tcp| {
            let _ = tcp.set_nodelay(true);
        });
        tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
        Self {
            base,
            state,
            client: reqwest::Client::new(),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn login(&self) -> String {
        let response = self
            .client
            .post(self.url("/admin/login"))
            .json(&json!({"email": ADMIN_EMAIL, "password": ADMIN_PASSWORD}))
            .send()
            .await
            .unwrap();
        assert_eq!(response.status(), StatusCode::OK);
        response.json::<Value>().await.unwrap()["token"].as_str().unwrap().to_owned()
    }

    pub async fn create_project(&self, token: &str, id: &str, system_message: &str) -> (StatusCode, Value) {
        self.post_json(
            "/new_project",
            Some(token),
            &json!({"project_id": id, "requested_by": "lab@uni.example", "system_message": system_message}),
        )
        .await
    }

    pub async fn post_json(&self, path: &str, token: Option<&str>, body: &Value) -> (StatusCode, Value) {
        let mut request = self.client.post(self.url(path)).json(body);
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }
        let response = request.send().await.unwrap();
        let status = response.status();
        (status, response.json().await.unwrap_or(Value::Null))
    }

    pub async fn put_json(&self, path: &str, token: &str, body: &Value) -> (StatusCode, Value) {
        let response = self.client.put(self.url(path)).bearer_auth(token).json(body).send().await.unwrap();
        let status = response.status();
        (status, response.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (StatusCode, String) {
        let mut request = self.client.get(self.url(path));
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }
        let response = request.send().await.unwrap();
        let status = response.status();
        (status, response.text().await.unwrap())
    }

    pub async fn get_json(&self, path: &str, token: Option<&str>) -> (StatusCode, Value) {
        let (status, text) = self.get(path, token).await;
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub async fn open(&self, params: &SessionParameters) -> (StatusCode, Value) {
        self.post_json(&format!("/chat/open?{}", params.to_query_string()), None, &json!({})).await
    }

    pub async fn history(&self, params: &SessionParameters) -> Value {
        let (status, body) = self.get_json(&format!("/chat/history?{}", params.to_query_string()), None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }

    /// Posts a message and collects every SSE frame. Non-SSE answers come
    /// back as `Err((status, body))`.
    pub async fn send(&self, params: &SessionParameters, body: &Value) -> Result<Vec<Frame>, (StatusCode, Value)> {
        let response = self
            .client
            .post(self.url(&format!("/chat/message?{}", params.to_query_string())))
            .json(body)
            .send()
            .await
            .unwrap();
        let status = response.status();
        let is_sse = response
            .headers()
            .get("content-type")
            .is_some_and(|v| v.to_str().unwrap_or("").starts_with("text/event-stream"));
        if !is_sse {
            return Err((status, response.json().await.unwrap_or(Value::Null)));
        }
        let bytes = response.bytes().await.unwrap();
        let mut decoder = SseDecoder::new();
        let mut events = decoder.push(&bytes);
        events.extend(decoder.finish());
        Ok(events
            .into_iter()
            .map(|e| Frame {
                event: e.event.unwrap_or_else(|| "message".into()),
                data: serde_json::from_str(&e.data).unwrap(),
            })
            .collect())
    }

    pub async fn say(&self, params: &SessionParameters, text: &str) -> Result<Vec<Frame>, (StatusCode, Value)> {
        self.send(params, &json!({ "text": text })).await
    }

    pub async fn upload(&self, params: &SessionParameters, payload: Vec<u8>, media_type: &str) -> (StatusCode, Value) {
        let part = reqwest::multipart::Part::bytes(payload)
            .file_name("photo")
            .mime_str(media_type)
            .unwrap();
        let form = reqwest::multipart::Form::new().part("image", part);
        let response = self
            .client
            .post(self.url(&format!("/chat/image?{}", params.to_query_string())))
            .multipart(form)
            .send()
            .await
            .unwrap();
        let status = response.status();
        (status, response.json().await.unwrap_or(Value::Null))
    }
}

pub fn params(pairs: &[(&str, &str)]) -> SessionParameters {
    chatbridge_core::parse_session_parameters(pairs.iter().copied()).unwrap()
}

/// Concatenated token deltas and the terminal frame.
pub fn split_frames(frames: &[Frame]) -> (String, &Frame) {
    let (last, tokens) = frames.split_last().expect("stream without frames");
    let mut text = String::new();
    for frame in tokens {
        assert_eq!(frame.event, "token", "only token frames may precede the terminal frame");
        text.push_str(frame.data["delta"].as_str().unwrap());
    }
    assert!(last.event == "done" || last.event == "error", "bad terminal {last:?}");
    (text, last)
}
