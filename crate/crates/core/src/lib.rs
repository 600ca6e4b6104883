//! Core of the chatbridge experiment chat gateway.
//!
//! * [`domain`]: identifiers, session parameters, messages.
//! * [`store`]: project, message and image storage.
//! * [`provider`]: model registry and LLM provider clients.
//! * [`chat`]: participant conversations and direct calls.
//! * [`admin`]: authenticated project management and export.

pub mod admin;
pub mod chat;
pub mod domain;
pub mod provider;
pub mod store;

pub use admin::{AdminCredentials, AdminError, AdminService};
pub use chat::{ChatError, ChatService, TurnEvent};
pub use domain::{
    conversation_key, parse_session_parameters, validate_project_id, ChatMessage, ConversationKey,
    DomainError, Project, ProjectId, Role, SessionParameters, SystemMessageRecord,
};
pub use provider::{ProviderError, ProviderGateway, Registry};
pub use store::{FileStore, MemoryStore, Store, StoreError};
