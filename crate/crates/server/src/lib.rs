//! HTTP layer of the chatbridge gateway.
//!
//! [`app`] assembles the router; [`AppState`] holds the chat and admin
//! services shared by all handlers.

pub mod admin;
pub mod chat;
pub mod config;
pub mod error;
mod extract;
pub mod public;

use std::sync::Arc;
use std::time::Duration;

use axum::extract::DefaultBodyLimit;
use axum::http::{header, HeaderValue, Method};
use axum::middleware;
use axum::Router;
use chatbridge_core::provider::MockProvider;
use chatbridge_core::{AdminCredentials, AdminService, ChatService, ProviderGateway, Registry, Store};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::trace::TraceLayer;

pub use error::ApiError;

/// Room for multipart framing on top of the image itself.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpSettings {
    /// Origins allowed to embed `/chat/*` and to call the API from a
    /// browser. Empty means any origin.
    pub allowed_origins: Vec<String>,
    /// `GET /download/chat/...` requires an admin bearer token.
    pub download_requires_token: bool,
    pub max_blob_bytes: usize,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            allowed_origins: Vec::new(),
            download_requires_token: true,
            max_blob_bytes: chatbridge_core::store::DEFAULT_MAX_BLOB_BYTES,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub chat: ChatService,
    pub admin: Arc<AdminService>,
    pub settings: Arc<HttpSettings>,
}

impl AppState {
    pub fn builder(store: Arc<dyn Store>, registry: Registry) -> AppStateBuilder {
        AppStateBuilder {
            store,
            registry,
            credentials: None,
            ttl: chatbridge_core::admin::DEFAULT_TOKEN_TTL,
            default_backend: None,
            settings: HttpSettings::default(),
        }
    }

    /// Steering handle for mock models.
    pub fn mock(&self) -> &MockProvider {
        self.chat.gateway().mock()
    }
}

pub struct AppStateBuilder {
    store: Arc<dyn Store>,
    registry: Registry,
    credentials: Option<AdminCredentials>,
    ttl: Duration,
    default_backend: Option<String>,
    settings: HttpSettings,
}

impl AppStateBuilder {
    pub fn credentials(mut self, credentials: Option<AdminCredentials>) -> Self {
        self.credentials = credentials;
        self
    }

    pub fn token_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn default_backend(mut self, backend: Option<String>) -> Self {
        self.default_backend = backend;
        self
    }

    pub fn settings(mut self, settings: HttpSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn build(self) -> AppState {
        let gateway = Arc::new(ProviderGateway::new(self.registry));
        let mut admin = AdminService::new(Arc::clone(&self.store), Arc::clone(gateway.registry()), self.credentials)
            .with_ttl(self.ttl);
        if let Some(backend) = self.default_backend {
            admin = admin.with_default_backend(backend);
        }
        AppState {
            chat: ChatService::new(self.store, gateway),
            admin: Arc::new(admin),
            settings: Arc::new(self.settings),
        }
    }
}

fn cors(settings: &HttpSettings) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::PUT, Method::PATCH, Method::DELETE])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE]);
    if settings.allowed_origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let origins: Vec<HeaderValue> = settings
        .allowed_origins
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    layer.allow_origin(AllowOrigin::list(origins))
}

pub fn app(state: AppState) -> Router {
    let body_limit = state.settings.max_blob_bytes + MULTIPART_OVERHEAD;
    let frame_policy = chat::frame_ancestors(&state.settings.allowed_origins);
    let chat = chat::routes()
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(middleware::map_response(move |mut response: axum::response::Response| {
            let policy = frame_policy.clone();
            async move {
                response.headers_mut().insert(header::CONTENT_SECURITY_POLICY, policy);
                response
            }
        }));
    Router::new()
        .merge(public::routes())
        .nest("/chat", chat)
        .nest("/admin", admin::routes())
        .layer(cors(&state.settings))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}
