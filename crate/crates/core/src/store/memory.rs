use std::collections::HashMap;
use std::sync::RwLock;

use super::state::State;
use super::{
    check_blob, BlobRef, ConversationFilter, ConversationSummary, ProjectUpdate, Store, StoreError,
    DEFAULT_MAX_BLOB_BYTES,
};
use crate::domain::{
    BlobId, ChatMessage, ConversationKey, NewProject, NewSystemMessage, Project, ProjectId,
    SystemMessageId, SystemMessageRecord,
};

/// Volatile store for tests and development runs.
pub struct MemoryStore {
    state: State,
    blobs: RwLock<HashMap<BlobId, (BlobRef, Vec<u8>)>>,
    max_blob_bytes: usize,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::with_max_blob_bytes(DEFAULT_MAX_BLOB_BYTES)
    }

    pub fn with_max_blob_bytes(max_blob_bytes: usize) -> Self {
        Self {
            state: State::default(),
            blobs: RwLock::default(),
            max_blob_bytes,
        }
    }
}

fn nothing<T>(_: &T) -> Result<(), StoreError> {
    Ok(())
}

impl Store for MemoryStore {
    fn create_project(&self, project: NewProject) -> Result<Project, StoreError> {
        self.state.create_project(project, nothing)
    }

    fn get_project(&self, id: &ProjectId) -> Result<Option<Project>, StoreError> {
        Ok(self.state.get_project(id))
    }

    fn list_projects(&self) -> Result<Vec<Project>, StoreError> {
        Ok(self.state.list_projects())
    }

    fn update_project(&self, id: &ProjectId, update: &ProjectUpdate) -> Result<Project, StoreError> {
        self.state.update_project(id, update, nothing)
    }

    fn put_system_message(&self, record: NewSystemMessage) -> Result<SystemMessageRecord, StoreError> {
        self.state.put_system_message(record, nothing)
    }

    fn get_system_message(&self, id: &SystemMessageId) -> Result<Option<SystemMessageRecord>, StoreError> {
        Ok(self.state.get_system_message(id))
    }

    fn list_system_messages(&self, project: &ProjectId) -> Result<Vec<SystemMessageRecord>, StoreError> {
        Ok(self.state.list_system_messages(project))
    }

    fn append_message(&self, key: &ConversationKey, message: ChatMessage) -> Result<ChatMessage, StoreError> {
        self.state.append_message(key, message, |_, _| Ok(()))
    }

    fn load_conversation(&self, key: &ConversationKey) -> Result<Vec<ChatMessage>, StoreError> {
        Ok(self.state.load_conversation(key))
    }

    fn query_conversations(&self, filter: &ConversationFilter) -> Result<Vec<ConversationSummary>, StoreError> {
        Ok(self.state.query_conversations(filter))
    }

    fn put_blob(&self, payload: &[u8], media_type: &str) -> Result<BlobRef, StoreError> {
        check_blob(payload, media_type, self.max_blob_bytes)?;
        let blob = BlobRef {
            id: BlobId::generate(),
            media_type: media_type.to_owned(),
            byte_length: payload.len() as u64,
        };
        self.blobs
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(blob.id.clone(), (blob.clone(), payload.to_vec()));
        Ok(blob)
    }

    fn get_blob(&self, id: &BlobId) -> Result<(BlobRef, Vec<u8>), StoreError> {
        self.blobs
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownBlob(id.clone()))
    }

    fn health_check(&self) -> Result<(), StoreError> {
        Ok(())
    }
}
