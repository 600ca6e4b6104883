//! Client for OpenAI-compatible `chat/completions` endpoints.

use std::collections::{HashMap, VecDeque};
use std::time::Duration;

use bytes::Bytes;
use futures::stream::BoxStream;
use futures::StreamExt;
use serde::Deserialize;
use serde_json::{json, Value};
use url::Url;

use super::registry::{AuthScheme, ProviderProfile, Registry, WireProtocol};
use super::sse::SseDecoder;
use super::{encode_turn, ChunkStream, CompletionChunk, ModelSpec, ProviderError, Turn};

const BODY_EXCERPT_CHARS: usize = 512;
const REDACTED: &str = "[redacted]";

pub struct OpenAiClient {
    clients: HashMap<String, reqwest::Client>,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct StreamFrame {
    #[serde(default)]
    choices: Vec<StreamChoice>,
    #[serde(default)]
    error: Option<Value>,
}

#[derive(Deserialize)]
struct StreamChoice {
    #[serde(default)]
    delta: StreamDelta,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize, Default)]
struct StreamDelta {
    #[serde(default)]
    content: Option<String>,
}

/// Replaces every occurrence of the credential and caps the length.
fn scrub(text: &str, secret: Option<&str>) -> String {
    let text = match secret {
        Some(secret) if !secret.is_empty() => text.replace(secret, REDACTED),
        _ => text.to_owned(),
    };
    if text.chars().count() > BODY_EXCERPT_CHARS {
        let mut excerpt: String = text.chars().take(BODY_EXCERPT_CHARS).collect();
        excerpt.push('…');
        excerpt
    } else {
        text
    }
}

fn unavailable(error: &reqwest::Error, secret: Option<&str>) -> ProviderError {
    let kind = if error.is_timeout() {
        "timed out"
    } else if error.is_connect() {
        "connection failed"
    } else {
        "transport error"
    };
    let detail = format!("{kind}: {}", scrub(&error.to_string(), secret));
    ProviderError::Unavailable(detail)
}

impl OpenAiClient {
    pub fn new(registry: &Registry) -> Self {
        let clients = registry
            .providers()
            .filter(|p| p.wire_protocol == WireProtocol::OpenAiChat)
            .map(|profile| {
                let timeout = Duration::from_secs(profile.request_timeout);
                let client = reqwest::Client::builder()
                    .connect_timeout(timeout)
                    .read_timeout(timeout)
                    .build()
                    .unwrap_or_default();
                (profile.name.clone(), client)
            })
            .collect();
        Self { clients }
    }

    fn endpoint(profile: &ProviderProfile) -> Result<Url, ProviderError> {
        let base = profile
            .base_url
            .as_ref()
            .ok_or_else(|| ProviderError::Unavailable(format!("provider `{}` has no base_url", profile.name)))?;
        let mut url = base.clone();
        {
            let mut segments = url
                .path_segments_mut()
                .map_err(|_| ProviderError::Unavailable("base_url cannot be a base".into()))?;
            segments.pop_if_empty().push("chat").push("completions");
        }
        if !profile.query.is_empty() {
            url.query_pairs_mut().extend_pairs(&profile.query);
        }
        Ok(url)
    }

    fn credential(profile: &ProviderProfile) -> Result<Option<String>, ProviderError> {
        match &profile.credential_env_var {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::MissingCredential(var.clone())),
        }
    }

    fn request(
        &self,
        profile: &ProviderProfile,
        spec: &ModelSpec,
        turns: &[Turn],
        stream: bool,
        secret: Option<&str>,
    ) -> Result<reqwest::RequestBuilder, ProviderError> {
        let client = self
            .clients
            .get(&profile.name)
            .ok_or_else(|| ProviderError::Unavailable(format!("no client for `{}`", profile.name)))?;
        let messages = turns.iter().map(encode_turn).collect::<Result<Vec<_>, _>>()?;
        let body = json!({
            "model": spec.remote_model_name,
            "messages": messages,
            "stream": stream,
        });
        let mut request = client.post(Self::endpoint(profile)?).json(&body);
        if let Some(secret) = secret {
            request = match profile.auth_scheme {
                AuthScheme::Bearer => request.bearer_auth(secret),
                AuthScheme::ApiKey => request.header("api-key", secret),
            };
        }
        Ok(request)
    }

    async fn rejected(response: reqwest::Response, secret: Option<&str>) -> ProviderError {
        let status = response.status().as_u16();
        let body = response.text().await.unwrap_or_default();
        ProviderError::Rejected {
            status,
            body: scrub(&body, secret),
        }
    }

    pub async fn complete(
        &self,
        profile: &ProviderProfile,
        spec: &ModelSpec,
        turns: &[Turn],
    ) -> Result<String, ProviderError> {
        let secret = Self::credential(profile)?;
        let secret = secret.as_deref();
        let timeout = Duration::from_secs(profile.request_timeout);
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match self
                .request(profile, spec, turns, false, secret)?
                .timeout(timeout)
                .send()
                .await
            {
                Ok(response) => break response,
                Err(e) if e.is_connect() && attempt == 1 => {
                    tracing::debug!(provider = %profile.name, "retrying after connection failure");
                }
                Err(e) => return Err(unavailable(&e.without_url(), secret)),
            }
        };
        if !response.status().is_success() {
            return Err(Self::rejected(response, secret).await);
        }
        let completion: Completion = response
            .json()
            .await
            .map_err(|e| unavailable(&e.without_url(), secret))?;
        let choice = completion
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Unavailable("response carried no choices".into()))?;
        Ok(choice.message.content.unwrap_or_default())
    }

    pub async fn complete_stream(
        &self,
        profile: &ProviderProfile,
        spec: &ModelSpec,
        turns: &[Turn],
    ) -> Result<ChunkStream, ProviderError> {
        let secret = Self::credential(profile)?;
        let response = self
            .request(profile, spec, turns, true, secret.as_deref())?
            .send()
            .await
            .map_err(|e| unavailable(&e.without_url(), secret.as_deref()))?;
        if !response.status().is_success() {
            return Err(Self::rejected(response, secret.as_deref()).await);
        }
        let state = StreamState {
            body: response.bytes_stream().boxed(),
            decoder: SseDecoder::new(),
            pending: VecDeque::new(),
            finish_reason: None,
            done: false,
            secret,
        };
        Ok(futures::stream::unfold(state, StreamState::next).boxed())
    }
}

struct StreamState {
    body: BoxStream<'static, reqwest::Result<Bytes>>,
    decoder: SseDecoder,
    pending: VecDeque<Result<CompletionChunk, ProviderError>>,
    finish_reason: Option<String>,
    done: bool,
    secret: Option<String>,
}

impl StreamState {
    async fn next(mut self) -> Option<(Result<CompletionChunk, ProviderError>, Self)> {
        loop {
            if let Some(item) = self.pending.pop_front() {
                return Some((item, self));
            }
            if self.done {
                return None;
            }
            match self.body.next().await {
                Some(Ok(bytes)) => {
                    for event in self.decoder.push(&bytes) {
                        self.handle(&event.data);
                        if self.done {
                            break;
                        }
                    }
                }
                Some(Err(e)) => {
                    self.fail(unavailable(&e.without_url(), self.secret.as_deref()));
                }
                None => {
                    if let Some(event) = self.decoder.finish() {
                        self.handle(&event.data);
                    }
                    if !self.done {
                        match self.finish_reason.take() {
                            Some(reason) => self.finish(Some(reason)),
                            None => self.fail(ProviderError::Unavailable(
                                "stream ended before completion".into(),
                            )),
                        }
                    }
                }
            }
        }
    }

    fn finish(&mut self, reason: Option<String>) {
        self.pending.push_back(Ok(CompletionChunk::finish("", reason)));
        self.done = true;
    }

    fn fail(&mut self, error: ProviderError) {
        self.pending.push_back(Err(error));
        self.done = true;
    }

    fn handle(&mut self, data: &str) {
        if self.done {
            return;
        }
        if data.trim() == "[DONE]" {
            let reason = self.finish_reason.take().or(Some("stop".into()));
            self.finish(reason);
            return;
        }
        let frame: StreamFrame = match serde_json::from_str(data) {
            Ok(frame) => frame,
            Err(e) => {
                self.fail(ProviderError::Unavailable(format!("malformed stream frame: {e}")));
                return;
            }
        };
        if let Some(error) = frame.error {
            let detail = scrub(&error.to_string(), self.secret.as_deref());
            self.fail(ProviderError::Unavailable(format!("upstream error: {detail}")));
            return;
        }
        for choice in frame.choices {
            if let Some(content) = choice.delta.content.filter(|c| !c.is_empty()) {
                self.pending.push_back(Ok(CompletionChunk::delta(content)));
            }
            if choice.finish_reason.is_some() {
                self.finish_reason = choice.finish_reason;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scrub_removes_secret_and_truncates() {
        assert_eq!(scrub("bad key sk-123 given", Some("sk-123")), "bad key [redacted] given");
        let long = "x".repeat(600);
        assert_eq!(scrub(&long, None).chars().count(), BODY_EXCERPT_CHARS + 1);
    }

    #[test]
    fn endpoint_appends_path_and_query() {
        let profile: ProviderProfile = serde_json::from_value(json!({
            "name": "azure",
            "wire_protocol": "openai-chat",
            "base_url": "https://x.example/openai/deployments/gpt4o/",
            "query": {"api-version": "2024-06-01"}
        }))
        .unwrap();
        assert_eq!(
            OpenAiClient::endpoint(&profile).unwrap().as_str(),
            "https://x.example/openai/deployments/gpt4o/chat/completions?api-version=2024-06-01"
        );
    }
}
