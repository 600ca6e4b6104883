//! Deterministic in-process provider.
//!
//! * `echo` replies `"ECHO: " + <last user text>`.
//! * `scripted` replays its configured replies in order, wrapping around.
//! * `delay` waits `delay_ms` before answering like `echo`.
//! * `fault` streams `after_chunks` echo deltas and then fails.
//!
//! Replies pushed through [`MockProvider::push_replies`] take precedence
//! over the configured behaviour until they are used up.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use super::{ChunkStream, CompletionChunk, ModelSpec, ProviderError, Turn};
use crate::domain::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "lowercase")]
pub enum MockBehavior {
    Echo,
    Scripted {
        replies: Vec<String>,
    },
    Delay {
        delay_ms: u64,
    },
    Fault {
        #[serde(default = "default_after_chunks")]
        after_chunks: usize,
    },
}

fn default_after_chunks() -> usize {
    2
}

fn default_chunk_size() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockOptions {
    #[serde(flatten)]
    pub behavior: MockBehavior,
    /// Stream chunk length in bytes, widened to the next character boundary.
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
}

impl Default for MockOptions {
    fn default() -> Self {
        Self {
            behavior: MockBehavior::Echo,
            chunk_size: default_chunk_size(),
        }
    }
}

#[derive(Default)]
struct AliasState {
    pushed: VecDeque<String>,
    script_position: usize,
    chunk_size: Option<usize>,
}

#[derive(Clone, Default)]
pub struct MockProvider {
    state: Arc<Mutex<HashMap<String, AliasState>>>,
}

/// Splits `text` into pieces of `size` bytes, extending each piece to the
/// next UTF-8 boundary so no character is split.
pub fn chunk_text(text: &str, size: usize) -> Vec<String> {
    let size = size.max(1);
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < text.len() {
        let mut end = (start + size).min(text.len());
        while !text.is_char_boundary(end) {
            end += 1;
        }
        chunks.push(text[start..end].to_owned());
        start = end;
    }
    chunks
}

fn echo(turns: &[Turn]) -> String {
    let last_user = turns
        .iter()
        .rev()
        .find(|t| t.role == Role::User)
        .map(|t| t.content.as_str())
        .unwrap_or_default();
    format!("ECHO: {last_user}")
}

impl MockProvider {
    /// Queues replies for `alias`, served before its configured behaviour.
    pub fn push_replies<I, S>(&self, alias: &str, replies: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state
            .entry(alias.to_owned())
            .or_default()
            .pushed
            .extend(replies.into_iter().map(Into::into));
    }

    /// Overrides the configured chunk size; `None` restores it.
    pub fn set_chunk_size(&self, alias: &str, size: Option<usize>) {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state.entry(alias.to_owned()).or_default().chunk_size = size;
    }

    fn options(spec: &ModelSpec) -> MockOptions {
        spec.mock.clone().unwrap_or_default()
    }

    /// Decides the reply text and chunk size for one call.
    fn plan(&self, spec: &ModelSpec, turns: &[Turn]) -> (String, usize) {
        let options = Self::options(spec);
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let alias = state.entry(spec.alias.clone()).or_default();
        let chunk_size = alias.chunk_size.unwrap_or(options.chunk_size);
        if let Some(reply) = alias.pushed.pop_front() {
            return (reply, chunk_size);
        }
        let text = match &options.behavior {
            MockBehavior::Scripted { replies } if !replies.is_empty() => {
                let reply = replies[alias.script_position % replies.len()].clone();
                alias.script_position += 1;
                reply
            }
            _ => echo(turns),
        };
        (text, chunk_size)
    }

    fn delay(spec: &ModelSpec) -> Option<Duration> {
        match Self::options(spec).behavior {
            MockBehavior::Delay { delay_ms } => Some(Duration::from_millis(delay_ms)),
            _ => None,
        }
    }

    fn fault_after(spec: &ModelSpec) -> Option<usize> {
        match Self::options(spec).behavior {
            MockBehavior::Fault { after_chunks } => Some(after_chunks),
            _ => None,
        }
    }

    pub async fn complete(&self, spec: &ModelSpec, turns: &[Turn]) -> Result<String, ProviderError> {
        if Self::fault_after(spec).is_some() {
            return Err(ProviderError::Unavailable("injected fault".into()));
        }
        let (text, _) = self.plan(spec, turns);
        if let Some(delay) = Self::delay(spec) {
            tokio::time::sleep(delay).await;
        }
        Ok(text)
    }

    pub fn complete_stream(&self, spec: &ModelSpec, turns: &[Turn]) -> ChunkStream {
        let (text, chunk_size) = self.plan(spec, turns);
        let chunks = chunk_text(&text, chunk_size);
        let delay = Self::delay(spec);

        let items: Vec<Result<CompletionChunk, ProviderError>> = match Self::fault_after(spec) {
            Some(after) => {
                let emitted = after.max(1).min(chunks.len());
                chunks
                    .into_iter()
                    .take(emitted)
                    .map(|c| Ok(CompletionChunk::delta(c)))
                    .chain(std::iter::once(Err(ProviderError::Unavailable(
                        "injected fault: connection reset mid-stream".into(),
                    ))))
                    .collect()
            }
            None => chunks
                .into_iter()
                .map(|c| Ok(CompletionChunk::delta(c)))
                .chain(std::iter::once(Ok(CompletionChunk::finish(
                    "",
                    Some("stop".into()),
                ))))
                .collect(),
        };

        let body = futures::stream::iter(items);
        match delay {
            Some(delay) => futures::stream::once(tokio::time::sleep(delay))
                .filter_map(|_| async { None })
                .chain(body)
                .boxed(),
            None => body.boxed(),
        }
    }
}
