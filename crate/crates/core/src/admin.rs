//! Authenticated administrative operations.
//!
//! A single credential pair is configured at deployment. [`AdminService::login`]
//! issues bearer tokens; every other operation takes an [`Authorized`] proof
//! obtained from [`AdminService::authorize`], so no storage access can
//! happen without a valid token.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use crate::domain::{
    validate_email, validate_project_id, BlobId, ConversationKey, DomainError, NewProject, Project,
    ProjectId, SystemMessageRecord,
};
use crate::provider::Registry;
use crate::store::{BlobRef, ConversationFilter, ConversationSummary, ProjectUpdate, Store, StoreError};

/// Lifetime of an admin token.
pub const DEFAULT_TOKEN_TTL: Duration = Duration::from_secs(12 * 60 * 60);

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum AdminError {
    #[error("authentication required")]
    AuthRequired,
    #[error("invalid credentials")]
    InvalidCredentials,
    #[error("unknown project `{0}`")]
    UnknownProject(ProjectId),
    #[error("project `{0}` already exists")]
    DuplicateProject(ProjectId),
    #[error("unknown conversation")]
    UnknownConversation,
    #[error("unknown provider backend `{0}`")]
    UnknownProviderBackend(String),
    #[error("unknown blob `{0}`")]
    UnknownBlob(BlobId),
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for AdminError {
    fn from(error: StoreError) -> Self {
        match error {
            StoreError::UnknownProject(id) => AdminError::UnknownProject(id),
            StoreError::DuplicateProjectId(id) => AdminError::DuplicateProject(id),
            StoreError::UnknownBlob(id) => AdminError::UnknownBlob(id),
            other => AdminError::Store(other),
        }
    }
}

#[derive(Clone)]
pub struct AdminCredentials {
    email: String,
    password: String,
}

impl AdminCredentials {
    pub fn new(email: impl Into<String>, password: impl Into<String>) -> Self {
        Self {
            email: email.into(),
            password: password.into(),
        }
    }
}

impl std::fmt::Debug for AdminCredentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdminCredentials")
            .field("email", &self.email)
            .field("password", &"[redacted]")
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminSession {
    pub token: String,
    pub issued_at: DateTime<Utc>,
    pub ttl: u64,
    pub expires_at: DateTime<Utc>,
}

/// Proof that the caller presented a valid token.
#[derive(Debug)]
pub struct Authorized(());

/// Fields accepted when registering a project.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRequest {
    pub project_id: String,
    pub requested_by: String,
    #[serde(default)]
    pub system_message: String,
    #[serde(default)]
    pub provider_backend: Option<String>,
    #[serde(default)]
    pub assistant_first: bool,
    #[serde(default)]
    pub max_turns: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRequest {
    pub page: usize,
    pub page_size: usize,
}

impl Default for PageRequest {
    fn default() -> Self {
        Self {
            page: 0,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
}

fn digest(value: &str) -> [u8; 32] {
    Sha256::digest(value.as_bytes()).into()
}

pub struct AdminService {
    store: Arc<dyn Store>,
    registry: Arc<Registry>,
    credentials: Option<AdminCredentials>,
    default_backend: Option<String>,
    ttl: Duration,
    /// Keyed by token digest.
    sessions: Mutex<HashMap<[u8; 32], DateTime<Utc>>>,
}

impl AdminService {
    /// Without credentials every login fails and the admin surface is closed.
    pub fn new(
        store: Arc<dyn Store>,
        registry: Arc<Registry>,
        credentials: Option<AdminCredentials>,
    ) -> Self {
        Self {
            store,
            registry,
            credentials,
            default_backend: None,
            ttl: DEFAULT_TOKEN_TTL,
            sessions: Mutex::default(),
        }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    /// Backend assigned to projects created without one. Defaults to the
    /// first provider in the registry.
    pub fn with_default_backend(mut self, backend: impl Into<String>) -> Self {
        self.default_backend = Some(backend.into());
        self
    }

    pub fn login(&self, email: &str, password: &str) -> Result<AdminSession, AdminError> {
        let Some(expected) = &self.credentials else {
            return Err(AdminError::InvalidCredentials);
        };
        // Both comparisons always run, over fixed-length digests.
        let email_ok = digest(email).ct_eq(&digest(&expected.email));
        let password_ok = digest(password).ct_eq(&digest(&expected.password));
        if !bool::from(email_ok & password_ok) {
            return Err(AdminError::InvalidCredentials);
        }

        let mut raw = [0u8; 32];
        rand::rng().fill_bytes(&mut raw);
        let token = URL_SAFE_NO_PAD.encode(raw);
        let issued_at = Utc::now();
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(digest(&token), issued_at);
        Ok(AdminSession {
            token,
            issued_at,
            ttl: self.ttl.as_secs(),
            expires_at: issued_at + self.ttl,
        })
    }

    pub fn logout(&self, token: &str) {
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&digest(token));
    }

    pub fn authorize(&self, token: Option<&str>) -> Result<Authorized, AdminError> {
        let token = token.ok_or(AdminError::AuthRequired)?;
        let key = digest(token);
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let issued_at = *sessions.get(&key).ok_or(AdminError::AuthRequired)?;
        if Utc::now() >= issued_at + self.ttl {
            sessions.remove(&key);
            return Err(AdminError::AuthRequired);
        }
        Ok(Authorized(()))
    }

    fn check_backend(&self, backend: &str) -> Result<(), AdminError> {
        match self.registry.provider(backend) {
            Some(_) => Ok(()),
            None => Err(AdminError::UnknownProviderBackend(backend.to_owned())),
        }
    }

    pub fn create_project(&self, _: &Authorized, request: ProjectRequest) -> Result<Project, AdminError> {
        let id = validate_project_id(&request.project_id)?;
        validate_email(&request.requested_by)?;
        let backend = match request.provider_backend {
            Some(backend) => backend,
            None => self
                .default_backend
                .clone()
                .or_else(|| self.registry.providers().next().map(|p| p.name.clone()))
                .ok_or_else(|| AdminError::UnknownProviderBackend(String::new()))?,
        };
        self.check_backend(&backend)?;
        Ok(self.store.create_project(NewProject {
            id,
            requested_by: request.requested_by,
            system_message: request.system_message,
            provider_backend: backend,
            assistant_first: request.assistant_first,
            max_turns: request.max_turns,
        })?)
    }

    pub fn list_projects(&self, _: &Authorized) -> Result<Vec<Project>, AdminError> {
        Ok(self.store.list_projects()?)
    }

    pub fn get_project(&self, _: &Authorized, pid: &ProjectId) -> Result<Project, AdminError> {
        self.store
            .get_project(pid)?
            .ok_or_else(|| AdminError::UnknownProject(pid.clone()))
    }

    fn update(&self, pid: &ProjectId, update: ProjectUpdate) -> Result<Project, AdminError> {
        Ok(self.store.update_project(pid, &update)?)
    }

    /// Idempotent; chat requests observe the flag on their next check.
    pub fn set_project_active(&self, _: &Authorized, pid: &ProjectId, active: bool) -> Result<Project, AdminError> {
        self.update(pid, ProjectUpdate {
            active: Some(active),
            ..Default::default()
        })
    }

    /// New default instruction; existing conversations keep their stored
    /// system turn.
    pub fn update_system_message(&self, _: &Authorized, pid: &ProjectId, content: &str) -> Result<Project, AdminError> {
        self.update(pid, ProjectUpdate {
            system_message: Some(content.to_owned()),
            ..Default::default()
        })
    }

    pub fn set_provider_backend(&self, _: &Authorized, pid: &ProjectId, backend: &str) -> Result<Project, AdminError> {
        self.check_backend(backend)?;
        self.update(pid, ProjectUpdate {
            provider_backend: Some(backend.to_owned()),
            ..Default::default()
        })
    }

    pub fn update_settings(
        &self,
        _: &Authorized,
        pid: &ProjectId,
        assistant_first: Option<bool>,
        max_turns: Option<Option<u32>>,
    ) -> Result<Project, AdminError> {
        self.update(pid, ProjectUpdate {
            assistant_first,
            max_turns,
            ..Default::default()
        })
    }

    pub fn list_system_messages(&self, auth: &Authorized, pid: &ProjectId) -> Result<Vec<SystemMessageRecord>, AdminError> {
        self.get_project(auth, pid)?;
        Ok(self.store.list_system_messages(pid)?)
    }

    pub fn list_conversations(
        &self,
        _: &Authorized,
        filter: &ConversationFilter,
        page: PageRequest,
    ) -> Result<Page<ConversationSummary>, AdminError> {
        let page_size = page.page_size.clamp(1, MAX_PAGE_SIZE);
        let rows = self.store.query_conversations(filter)?;
        let total = rows.len();
        let items = rows
            .into_iter()
            .skip(page.page.saturating_mul(page_size))
            .take(page_size)
            .collect();
        Ok(Page {
            items,
            total,
            page: page.page,
            page_size,
        })
    }

    /// Full transcript of one conversation as a JSON array of messages.
    /// Identical bytes on repeated calls while nothing is appended.
    pub fn export_conversation(&self, _: &Authorized, key: &ConversationKey) -> Result<String, AdminError> {
        let messages = self.store.load_conversation(key)?;
        if messages.is_empty() {
            return Err(AdminError::UnknownConversation);
        }
        serde_json::to_string_pretty(&messages)
            .map_err(|e| AdminError::Store(StoreError::Io(std::io::Error::other(e))))
    }

    pub fn get_blob(&self, _: &Authorized, id: &BlobId) -> Result<(BlobRef, Vec<u8>), AdminError> {
        Ok(self.store.get_blob(id)?)
    }
}
