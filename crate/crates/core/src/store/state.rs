use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use chrono::Utc;
use indexmap::IndexMap;

use super::{ConversationFilter, ConversationSummary, ProjectUpdate, StoreError};
use crate::domain::{
    ChatMessage, ConversationKey, NewProject, NewSystemMessage, Project, ProjectId,
    SystemMessageId, SystemMessageRecord,
};

type Conversation = Arc<Mutex<Vec<ChatMessage>>>;

/// In-memory indexes shared by both store implementations. Each mutating
/// method takes a `persist` hook that runs under the relevant lock before
/// the change becomes visible, so a failed write leaves memory untouched.
#[derive(Default)]
pub(crate) struct State {
    projects: RwLock<IndexMap<ProjectId, Project>>,
    system_messages: RwLock<HashMap<SystemMessageId, SystemMessageRecord>>,
    conversations: RwLock<HashMap<ConversationKey, Conversation>>,
}

// Lock poisoning only happens if a persist hook panicked; the protected data
// is still consistent because hooks run before mutation.
fn read<T>(lock: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    lock.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(lock: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    lock.write().unwrap_or_else(|e| e.into_inner())
}

fn lock<T>(mutex: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    mutex.lock().unwrap_or_else(|e| e.into_inner())
}

impl State {
    pub fn create_project(
        &self,
        new: NewProject,
        persist: impl FnOnce(&Project) -> Result<(), StoreError>,
    ) -> Result<Project, StoreError> {
        let mut projects = write(&self.projects);
        if projects.contains_key(&new.id) {
            return Err(StoreError::DuplicateProjectId(new.id));
        }
        let project = Project {
            id: new.id,
            requested_by: new.requested_by,
            system_message: new.system_message,
            active: true,
            provider_backend: new.provider_backend,
            assistant_first: new.assistant_first,
            max_turns: new.max_turns,
            created_at: Utc::now(),
        };
        persist(&project)?;
        projects.insert(project.id.clone(), project.clone());
        Ok(project)
    }

    pub fn get_project(&self, id: &ProjectId) -> Option<Project> {
        read(&self.projects).get(id).cloned()
    }

    pub fn list_projects(&self) -> Vec<Project> {
        read(&self.projects).values().cloned().collect()
    }

    pub fn update_project(
        &self,
        id: &ProjectId,
        update: &ProjectUpdate,
        persist: impl FnOnce(&Project) -> Result<(), StoreError>,
    ) -> Result<Project, StoreError> {
        let mut projects = write(&self.projects);
        let current = projects
            .get(id)
            .ok_or_else(|| StoreError::UnknownProject(id.clone()))?;
        let mut updated = current.clone();
        update.apply(&mut updated);
        persist(&updated)?;
        projects.insert(id.clone(), updated.clone());
        Ok(updated)
    }

    /// Used during replay; later snapshots replace earlier ones.
    pub fn restore_project(&self, project: Project) {
        write(&self.projects).insert(project.id.clone(), project);
    }

    pub fn put_system_message(
        &self,
        new: NewSystemMessage,
        persist: impl FnOnce(&SystemMessageRecord) -> Result<(), StoreError>,
    ) -> Result<SystemMessageRecord, StoreError> {
        if !read(&self.projects).contains_key(&new.project_id) {
            return Err(StoreError::UnknownProject(new.project_id));
        }
        let mut records = write(&self.system_messages);
        let mut id = SystemMessageId::generate();
        while records.contains_key(&id) {
            id = SystemMessageId::generate();
        }
        let record = SystemMessageRecord {
            id,
            project_id: new.project_id,
            content: new.content,
            requested_by: new.requested_by,
            created_at: Utc::now(),
        };
        persist(&record)?;
        records.insert(record.id.clone(), record.clone());
        Ok(record)
    }

    pub fn restore_system_message(&self, record: SystemMessageRecord) {
        write(&self.system_messages).insert(record.id.clone(), record);
    }

    pub fn get_system_message(&self, id: &SystemMessageId) -> Option<SystemMessageRecord> {
        read(&self.system_messages).get(id).cloned()
    }

    pub fn list_system_messages(&self, project: &ProjectId) -> Vec<SystemMessageRecord> {
        let mut records: Vec<_> = read(&self.system_messages)
            .values()
            .filter(|r| r.project_id == *project)
            .cloned()
            .collect();
        records.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        records
    }

    fn conversation(&self, key: &ConversationKey) -> Conversation {
        if let Some(conversation) = read(&self.conversations).get(key) {
            return Arc::clone(conversation);
        }
        Arc::clone(write(&self.conversations).entry(key.clone()).or_default())
    }

    pub fn append_message(
        &self,
        key: &ConversationKey,
        mut message: ChatMessage,
        persist: impl FnOnce(&ChatMessage, bool) -> Result<(), StoreError>,
    ) -> Result<ChatMessage, StoreError> {
        if !key.matches(&message.params) {
            return Err(StoreError::KeyMismatch(Box::new(key.clone())));
        }
        let conversation = self.conversation(key);
        let mut messages = lock(&conversation);
        if let Some(last) = messages.last() {
            if message.timestamp < last.timestamp {
                message.timestamp = last.timestamp;
            }
        }
        persist(&message, messages.is_empty())?;
        messages.push(message.clone());
        Ok(message)
    }

    pub fn restore_conversation(&self, key: ConversationKey, messages: Vec<ChatMessage>) {
        write(&self.conversations).insert(key, Arc::new(Mutex::new(messages)));
    }

    pub fn load_conversation(&self, key: &ConversationKey) -> Vec<ChatMessage> {
        let conversation = read(&self.conversations).get(key).cloned();
        conversation
            .map(|c| lock(&c).clone())
            .unwrap_or_default()
    }

    pub fn query_conversations(&self, filter: &ConversationFilter) -> Vec<ConversationSummary> {
        let candidates: Vec<(ConversationKey, Conversation)> = read(&self.conversations)
            .iter()
            .filter(|(key, _)| filter.matches_key(key))
            .map(|(key, c)| (key.clone(), Arc::clone(c)))
            .collect();
        let mut rows: Vec<ConversationSummary> = candidates
            .into_iter()
            .filter_map(|(key, conversation)| {
                let messages = lock(&conversation);
                let last = messages.last()?;
                if !filter.matches(&key, &messages) {
                    return None;
                }
                Some(ConversationSummary {
                    conversation_id: key.conversation_id(),
                    message_count: messages.len(),
                    last_timestamp: last.timestamp,
                    key,
                })
            })
            .collect();
        rows.sort_by(|a, b| a.key.cmp(&b.key));
        rows
    }
}
