//! Document and blob storage.
//!
//! [`MemoryStore`] backs tests and development runs. [`FileStore`] keeps one
//! append-only record log per conversation plus manifest logs for projects,
//! system messages and blobs, and replays them on open.

mod file;
mod memory;
mod state;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{
    BlobId, ChatMessage, ConversationKey, NewProject, NewSystemMessage, Project, ProjectId,
    SystemMessageId, SystemMessageRecord,
};

pub use file::FileStore;
pub use memory::MemoryStore;

/// Default upper bound for uploaded images.
pub const DEFAULT_MAX_BLOB_BYTES: usize = 10 * 1024 * 1024;

/// Media types accepted for participant uploads.
pub const ALLOWED_IMAGE_TYPES: [&str; 3] = ["image/png", "image/jpeg", "image/webp"];

pub fn is_allowed_image_type(media_type: &str) -> bool {
    ALLOWED_IMAGE_TYPES.contains(&media_type)
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("project `{0}` already exists")]
    DuplicateProjectId(ProjectId),
    #[error("unknown project `{0}`")]
    UnknownProject(ProjectId),
    #[error("message parameters do not belong to conversation {0:?}")]
    KeyMismatch(Box<ConversationKey>),
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    BlobTooLarge { len: usize, max: usize },
    #[error("unsupported media type `{0}`")]
    UnsupportedMediaType(String),
    #[error("unknown blob `{0}`")]
    UnknownBlob(BlobId),
    #[error("store unavailable: {0}")]
    Unavailable(String),
    #[error("corrupt record in {path}: {detail}")]
    Corrupt { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Metadata of a stored upload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub id: BlobId,
    pub media_type: String,
    pub byte_length: u64,
}

/// Conversation search criteria. Absent fields match anything; a
/// conversation is selected when at least one of its messages satisfies
/// every present field.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationFilter {
    pub project_id: Option<ProjectId>,
    pub model: Option<String>,
    pub participant_id: Option<String>,
    pub experiment_id: Option<String>,
    pub conversation_key: Option<ConversationKey>,
    /// Case-insensitive substring of message content.
    pub text_query: Option<String>,
}

impl ConversationFilter {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn matches_key(&self, key: &ConversationKey) -> bool {
        self.project_id.as_ref().is_none_or(|p| *p == key.pid)
            && self
                .participant_id
                .as_ref()
                .is_none_or(|p| *p == key.participant_id)
            && self
                .experiment_id
                .as_ref()
                .is_none_or(|e| *e == key.experiment_id)
            && self.conversation_key.as_ref().is_none_or(|k| k == key)
    }

    /// Message-level fields only; the lowercase needle is precomputed by the caller.
    fn matches_message(&self, message: &ChatMessage, needle: Option<&str>) -> bool {
        self.model.as_ref().is_none_or(|m| *m == message.model)
            && needle.is_none_or(|n| message.content.to_lowercase().contains(n))
    }

    /// Evaluates the filter against one conversation.
    pub fn matches(&self, key: &ConversationKey, messages: &[ChatMessage]) -> bool {
        if !self.matches_key(key) {
            return false;
        }
        let needle = self.text_query.as_ref().map(|q| q.to_lowercase());
        messages
            .iter()
            .any(|m| self.matches_message(m, needle.as_deref()))
    }
}

/// One row of a conversation listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationSummary {
    pub conversation_id: String,
    pub key: ConversationKey,
    pub message_count: usize,
    pub last_timestamp: DateTime<Utc>,
}

/// Partial update of a project's mutable fields.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProjectUpdate {
    pub active: Option<bool>,
    pub system_message: Option<String>,
    pub provider_backend: Option<String>,
    pub assistant_first: Option<bool>,
    pub max_turns: Option<Option<u32>>,
}

impl ProjectUpdate {
    pub(crate) fn apply(&self, project: &mut Project) {
        if let Some(active) = self.active {
            project.active = active;
        }
        if let Some(system_message) = &self.system_message {
            project.system_message.clone_from(system_message);
        }
        if let Some(backend) = &self.provider_backend {
            project.provider_backend.clone_from(backend);
        }
        if let Some(assistant_first) = self.assistant_first {
            project.assistant_first = assistant_first;
        }
        if let Some(max_turns) = self.max_turns {
            project.max_turns = max_turns;
        }
    }
}

/// Storage operations used by the chat and admin services.
///
/// Implementations are safe for concurrent callers. Appends to one
/// conversation are serialized; appends to different conversations do not
/// contend.
pub trait Store: Send + Sync {
    /// Registers a project. The store sets `active = true` and `created_at`.
    fn create_project(&self, project: NewProject) -> Result<Project, StoreError>;
    fn get_project(&self, id: &ProjectId) -> Result<Option<Project>, StoreError>;
    /// All projects in creation order.
    fn list_projects(&self) -> Result<Vec<Project>, StoreError>;
    fn update_project(&self, id: &ProjectId, update: &ProjectUpdate) -> Result<Project, StoreError>;

    fn put_system_message(&self, record: NewSystemMessage) -> Result<SystemMessageRecord, StoreError>;
    fn get_system_message(&self, id: &SystemMessageId) -> Result<Option<SystemMessageRecord>, StoreError>;
    fn list_system_messages(&self, project: &ProjectId) -> Result<Vec<SystemMessageRecord>, StoreError>;

    /// Appends after every previously acknowledged message of `key` and
    /// returns the stored form. Timestamps are clamped so they never
    /// decrease within a conversation.
    fn append_message(&self, key: &ConversationKey, message: ChatMessage) -> Result<ChatMessage, StoreError>;
    /// Messages of `key` in append order; empty for unknown keys.
    fn load_conversation(&self, key: &ConversationKey) -> Result<Vec<ChatMessage>, StoreError>;
    /// Keys of conversations matching `filter`, sorted by key.
    fn query_conversations(&self, filter: &ConversationFilter) -> Result<Vec<ConversationSummary>, StoreError>;

    fn put_blob(&self, payload: &[u8], media_type: &str) -> Result<BlobRef, StoreError>;
    fn get_blob(&self, id: &BlobId) -> Result<(BlobRef, Vec<u8>), StoreError>;

    fn health_check(&self) -> Result<(), StoreError>;
}

pub(crate) fn check_blob(payload: &[u8], media_type: &str, max: usize) -> Result<(), StoreError> {
    if !is_allowed_image_type(media_type) {
        return Err(StoreError::UnsupportedMediaType(media_type.to_owned()));
    }
    if payload.len() > max {
        return Err(StoreError::BlobTooLarge {
            len: payload.len(),
            max,
        });
    }
    Ok(())
}
