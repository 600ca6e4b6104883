use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::state::State;
use super::{
    check_blob, BlobRef, ConversationFilter, ConversationSummary, ProjectUpdate, Store, StoreError,
    DEFAULT_MAX_BLOB_BYTES,
};
use crate::domain::{
    BlobId, ChatMessage, ConversationKey, NewProject, NewSystemMessage, Project, ProjectId,
    SystemMessageId, SystemMessageRecord,
};

const PROJECTS_LOG: &str = "projects.log";
const SYSTEM_MESSAGES_LOG: &str = "system_messages.log";
const BLOBS_LOG: &str = "blobs.log";
const CONVERSATIONS_DIR: &str = "conversations";
const BLOBS_DIR: &str = "blobs";

/// Single-node durable store.
///
/// Layout under the root directory:
///
/// ```text
/// projects.log             project snapshots, last one per id wins
/// system_messages.log      custom system messages
/// blobs.log                blob metadata
/// blobs/<id>               raw upload bytes
/// conversations/<h>.log    one log per conversation, h = sha256(conversation id)
/// ```
///
/// Every log is a sequence of records, each a big-endian `u32` length
/// followed by that many bytes of JSON. Appends are flushed with
/// `sync_data` before they are acknowledged. A torn record at the tail of a
/// log (crash mid-write) is discarded on open.
pub struct FileStore {
    root: PathBuf,
    state: State,
    blobs: RwLock<HashMap<BlobId, BlobRef>>,
    max_blob_bytes: usize,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Self::open_with_max_blob_bytes(root, DEFAULT_MAX_BLOB_BYTES)
    }

    pub fn open_with_max_blob_bytes(
        root: impl Into<PathBuf>,
        max_blob_bytes: usize,
    ) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(CONVERSATIONS_DIR))?;
        fs::create_dir_all(root.join(BLOBS_DIR))?;

        let state = State::default();
        for project in read_records::<Project>(&root.join(PROJECTS_LOG))? {
            state.restore_project(project);
        }
        for record in read_records::<SystemMessageRecord>(&root.join(SYSTEM_MESSAGES_LOG))? {
            state.restore_system_message(record);
        }
        let blobs = read_records::<BlobRef>(&root.join(BLOBS_LOG))?
            .into_iter()
            .map(|b| (b.id.clone(), b))
            .collect();

        for entry in fs::read_dir(root.join(CONVERSATIONS_DIR))? {
            let path = entry?.path();
            if path.extension().is_none_or(|ext| ext != "log") {
                continue;
            }
            let messages = read_records::<ChatMessage>(&path)?;
            let Some(first) = messages.first() else {
                continue;
            };
            let key = first.params.conversation_key();
            if let Some(stray) = messages.iter().find(|m| !key.matches(&m.params)) {
                return Err(StoreError::Corrupt {
                    path: path.display().to_string(),
                    detail: format!("message {} belongs to another conversation", stray.message_id),
                });
            }
            state.restore_conversation(key, messages);
        }

        Ok(Self {
            root,
            state,
            blobs: RwLock::new(blobs),
            max_blob_bytes,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn conversation_path(&self, key: &ConversationKey) -> PathBuf {
        let digest = Sha256::digest(key.conversation_id().as_bytes());
        self.root
            .join(CONVERSATIONS_DIR)
            .join(format!("{}.log", hex::encode(digest)))
    }
}

fn encode_record<T: Serialize>(value: &T) -> Result<Vec<u8>, StoreError> {
    let json = serde_json::to_vec(value).map_err(io::Error::other)?;
    let len = u32::try_from(json.len()).map_err(|_| io::Error::other("record too large"))?;
    let mut buf = Vec::with_capacity(json.len() + 4);
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(&json);
    Ok(buf)
}

fn append_record<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let buf = encode_record(value)?;
    let created = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&buf)?;
    file.sync_data()?;
    if created {
        sync_parent(path)?;
    }
    Ok(())
}

fn sync_parent(path: &Path) -> io::Result<()> {
    match path.parent() {
        Some(dir) => File::open(dir)?.sync_all(),
        None => Ok(()),
    }
}

/// Reads every complete record of a log, truncating a torn tail.
fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut file) => {
            file.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    }

    let mut records = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let Some(header) = bytes.get(offset..offset + 4) else {
            break;
        };
        let len = u32::from_be_bytes(header.try_into().expect("4-byte slice")) as usize;
        let Some(body) = bytes.get(offset + 4..offset + 4 + len) else {
            break;
        };
        let record = serde_json::from_slice(body).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            detail: format!("record at byte {offset}: {e}"),
        })?;
        records.push(record);
        offset += 4 + len;
    }
    if offset < bytes.len() {
        tracing::warn!(path = %path.display(), offset, "discarding torn record at log tail");
        OpenOptions::new()
            .write(true)
            .open(path)?
            .set_len(offset as u64)?;
    }
    Ok(records)
}

impl Store for FileStore {
    fn create_project(&self, project: NewProject) -> Result<Project, StoreError> {
        let path = self.root.join(PROJECTS_LOG);
        self.state
            .create_project(project, |p| append_record(&path, p))
    }

    fn get_project(&self, id: &ProjectId) -> Result<Option<Project>, StoreError> {
        Ok(self.state.get_project(id))
    }

    fn list_projects(&self) -> Result<Vec<Project>, StoreError> {
        Ok(self.state.list_projects())
    }

    fn update_project(&self, id: &ProjectId, update: &ProjectUpdate) -> Result<Project, StoreError> {
        let path = self.root.join(PROJECTS_LOG);
        self.state
            .update_project(id, update, |p| append_record(&path, p))
    }

    fn put_system_message(&self, record: NewSystemMessage) -> Result<SystemMessageRecord, StoreError> {
        let path = self.root.join(SYSTEM_MESSAGES_LOG);
        self.state
            .put_system_message(record, |r| append_record(&path, r))
    }

    fn get_system_message(&self, id: &SystemMessageId) -> Result<Option<SystemMessageRecord>, StoreError> {
        Ok(self.state.get_system_message(id))
    }

    fn list_system_messages(&self, project: &ProjectId) -> Result<Vec<SystemMessageRecord>, StoreError> {
        Ok(self.state.list_system_messages(project))
    }

    fn append_message(&self, key: &ConversationKey, message: ChatMessage) -> Result<ChatMessage, StoreError> {
        let path = self.conversation_path(key);
        self.state
            .append_message(key, message, |m, _| append_record(&path, m))
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
        let path = self.root.join(BLOBS_DIR).join(blob.id.as_str());
        let mut file = File::create(&path)?;
        file.write_all(payload)?;
        file.sync_all()?;
        sync_parent(&path)?;
        append_record(&self.root.join(BLOBS_LOG), &blob)?;
        self.blobs
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(blob.id.clone(), blob.clone());
        Ok(blob)
    }

    fn get_blob(&self, id: &BlobId) -> Result<(BlobRef, Vec<u8>), StoreError> {
        let blob = self
            .blobs
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownBlob(id.clone()))?;
        let payload = fs::read(self.root.join(BLOBS_DIR).join(id.as_str()))?;
        if payload.len() as u64 != blob.byte_length {
            return Err(StoreError::Corrupt {
                path: id.to_string(),
                detail: "blob length does not match its metadata".into(),
            });
        }
        Ok((blob, payload))
    }

    fn health_check(&self) -> Result<(), StoreError> {
        let meta = fs::metadata(self.root.join(CONVERSATIONS_DIR))
            .map_err(|e| StoreError::Unavailable(format!("data directory: {e}")))?;
        if !meta.is_dir() || meta.permissions().readonly() {
            return Err(StoreError::Unavailable("data directory is not writable".into()));
        }
        Ok(())
    }
}
