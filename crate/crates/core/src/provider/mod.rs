//! Uniform client layer over LLM providers.
//!
//! A [`Registry`] maps the `model` query parameter to a [`ModelSpec`] and
//! its [`ProviderProfile`]. [`ProviderGateway`] dispatches blocking and
//! streaming completions to the OpenAI-compatible client or the built-in
//! mock provider.

mod image;
mod mock;
mod openai;
mod registry;
mod sse;

use std::pin::Pin;
use std::sync::Arc;

use futures::{Stream, StreamExt};

use crate::domain::Role;
use crate::store::BlobRef;

pub use image::{encode_image_turn, encode_turn};
pub use mock::{chunk_text, MockBehavior, MockOptions, MockProvider};
pub use openai::OpenAiClient;
pub use registry::{AuthScheme, ModelSpec, ProviderProfile, Registry, RegistryError, WireProtocol};
pub use sse::{SseDecoder, SseEvent};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("unknown model `{alias}` (available: {})", available.join(", "))]
    UnknownModel { alias: String, available: Vec<String> },
    #[error("model `{0}` does not accept images")]
    VisionUnsupported(String),
    #[error("unsupported media type `{0}`")]
    UnsupportedMediaType(String),
    #[error("conversation has no turns")]
    EmptyConversation,
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
}

/// One participant or model turn as sent to a provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    pub image: Option<ImageAttachment>,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            image: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    pub blob: BlobRef,
    pub payload: Arc<[u8]>,
}

/// One increment of a streamed completion. The last chunk of a successful
/// stream has `finished = true`; no chunk follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionChunk {
    pub delta: String,
    pub finished: bool,
    pub finish_reason: Option<String>,
}

impl CompletionChunk {
    pub fn delta(text: impl Into<String>) -> Self {
        Self {
            delta: text.into(),
            finished: false,
            finish_reason: None,
        }
    }

    pub fn finish(delta: impl Into<String>, reason: Option<String>) -> Self {
        Self {
            delta: delta.into(),
            finished: true,
            finish_reason: reason,
        }
    }
}

pub type ChunkStream = Pin<Box<dyn Stream<Item = Result<CompletionChunk, ProviderError>> + Send>>;

/// Routes completions to the provider named by each model's profile.
pub struct ProviderGateway {
    registry: Arc<Registry>,
    mock: MockProvider,
    openai: OpenAiClient,
}

impl ProviderGateway {
    pub fn new(registry: Registry) -> Self {
        let registry = Arc::new(registry);
        Self {
            openai: OpenAiClient::new(&registry),
            mock: MockProvider::default(),
            registry,
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Handle for steering mock models at runtime (tests and demos).
    pub fn mock(&self) -> &MockProvider {
        &self.mock
    }

    pub fn resolve_model(&self, alias: &str) -> Result<ModelSpec, ProviderError> {
        self.registry.resolve_model(alias).cloned()
    }

    fn check(&self, spec: &ModelSpec, turns: &[Turn]) -> Result<(), ProviderError> {
        if turns.is_empty() {
            return Err(ProviderError::EmptyConversation);
        }
        if !spec.supports_vision && turns.iter().any(|t| t.image.is_some()) {
            return Err(ProviderError::VisionUnsupported(spec.alias.clone()));
        }
        Ok(())
    }

    fn profile(&self, spec: &ModelSpec) -> Result<&ProviderProfile, ProviderError> {
        self.registry.provider(&spec.provider_backend).ok_or_else(|| {
            ProviderError::Unavailable(format!("no provider profile `{}`", spec.provider_backend))
        })
    }

    /// Full assistant reply; no partial result on error.
    pub async fn complete(&self, spec: &ModelSpec, turns: &[Turn]) -> Result<String, ProviderError> {
        self.check(spec, turns)?;
        let profile = self.profile(spec)?;
        match profile.wire_protocol {
            WireProtocol::Mock => self.mock.complete(spec, turns).await,
            WireProtocol::OpenAiChat => self.openai.complete(profile, spec, turns).await,
        }
    }

    /// Streams the reply. Models without streaming support produce a single
    /// terminal chunk carrying the whole text.
    pub async fn complete_stream(
        &self,
        spec: &ModelSpec,
        turns: &[Turn],
    ) -> Result<ChunkStream, ProviderError> {
        self.check(spec, turns)?;
        let profile = self.profile(spec)?;
        if !spec.supports_streaming {
            let text = self.complete(spec, turns).await?;
            let chunk = CompletionChunk::finish(text, Some("stop".into()));
            return Ok(futures::stream::once(async move { Ok(chunk) }).boxed());
        }
        match profile.wire_protocol {
            WireProtocol::Mock => Ok(self.mock.complete_stream(spec, turns)),
            WireProtocol::OpenAiChat => self.openai.complete_stream(profile, spec, turns).await,
        }
    }
}
