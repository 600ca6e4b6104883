//! Participant conversations.
//!
//! [`ChatService`] resolves the project and its instruction, gates images,
//! runs provider calls and persists every turn. At most one generation runs
//! per conversation key; other conversations are never blocked by it.

use std::collections::HashSet;
use std::pin::Pin;
use std::sync::{Arc, Mutex};

use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::domain::{
    validate_identifier, BlobId, ChatMessage, ConversationKey, DomainError, NewSystemMessage, Project,
    ProjectId, Role, SessionParameters, SystemMessageId, SystemMessageRecord,
};
use crate::provider::{ImageAttachment, ModelSpec, ProviderError, ProviderGateway, Turn};
use crate::store::{BlobRef, ConversationFilter, Store, StoreError};

/// Suffix appended to an assistant reply whose stream broke off.
pub const TRUNCATION_MARKER: &str = "\n[RESPONSE INTERRUPTED]";

/// `experiment_id` under which direct calls are recorded.
pub const DIRECT_CALL_EXPERIMENT: &str = "direct_call";

#[derive(Debug, thiserror::Error)]
pub enum ChatError {
    #[error("unknown project `{0}`")]
    UnknownProject(ProjectId),
    #[error("project `{0}` is not active")]
    ProjectInactive(ProjectId),
    #[error("unknown model `{alias}` (available: {})", available.join(", "))]
    UnknownModel { alias: String, available: Vec<String> },
    #[error("unknown system message id `{0}`")]
    UnknownSystemMessageId(SystemMessageId),
    #[error("a response is still being generated for this conversation")]
    GenerationInFlight,
    #[error("image upload is disabled for this session")]
    ImageUploadDisabled,
    #[error("model `{0}` does not accept images")]
    VisionUnsupported(String),
    #[error("unknown image `{0}`")]
    UnknownImage(BlobId),
    #[error("conversation reached its limit of {0} turns")]
    TurnLimitReached(u32),
    #[error("message is empty")]
    EmptyMessage,
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error(transparent)]
    Provider(ProviderError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<ProviderError> for ChatError {
    fn from(error: ProviderError) -> Self {
        match error {
            ProviderError::UnknownModel { alias, available } => ChatError::UnknownModel { alias, available },
            ProviderError::VisionUnsupported(alias) => ChatError::VisionUnsupported(alias),
            other => ChatError::Provider(other),
        }
    }
}

impl From<StoreError> for ChatError {
    fn from(error: StoreError) -> Self {
        match error {
            StoreError::UnknownProject(id) => ChatError::UnknownProject(id),
            StoreError::UnknownBlob(id) => ChatError::UnknownImage(id),
            other => ChatError::Store(other),
        }
    }
}

/// Current state of one conversation as seen by the chat window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub conversation_id: String,
    pub key: ConversationKey,
    pub messages: Vec<ChatMessage>,
    /// False while an assistant reply is being generated.
    pub accepting_input: bool,
}

/// Progress of one assistant reply.
#[derive(Debug)]
pub enum TurnEvent {
    Delta(String),
    /// The reply finished and was stored.
    Done(ChatMessage),
    /// The provider failed; the partial reply was stored with the
    /// truncation marker.
    Failed { error: ChatError, partial: ChatMessage },
}

pub type TurnStream = Pin<Box<dyn Stream<Item = TurnEvent> + Send>>;

/// One turn of a direct call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectTurn {
    pub role: Role,
    pub content: String,
}

/// All sessions of one (project, experiment, participant) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub sessions: Vec<SessionTranscript>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: String,
    pub messages: Vec<ChatMessage>,
}

/// Marks a conversation as generating until dropped.
struct InFlight {
    set: Arc<Mutex<HashSet<ConversationKey>>>,
    key: ConversationKey,
}

impl Drop for InFlight {
    fn drop(&mut self) {
        self.set
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&self.key);
    }
}

#[derive(Clone)]
pub struct ChatService {
    store: Arc<dyn Store>,
    gateway: Arc<ProviderGateway>,
    in_flight: Arc<Mutex<HashSet<ConversationKey>>>,
}

impl ChatService {
    pub fn new(store: Arc<dyn Store>, gateway: Arc<ProviderGateway>) -> Self {
        Self {
            store,
            gateway,
            in_flight: Arc::default(),
        }
    }

    pub fn store(&self) -> &Arc<dyn Store> {
        &self.store
    }

    pub fn gateway(&self) -> &Arc<ProviderGateway> {
        &self.gateway
    }

    fn claim(&self, key: &ConversationKey) -> Option<InFlight> {
        let mut set = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        set.insert(key.clone()).then(|| InFlight {
            set: Arc::clone(&self.in_flight),
            key: key.clone(),
        })
    }

    pub fn is_generating(&self, key: &ConversationKey) -> bool {
        self.in_flight
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .contains(key)
    }

    /// Fetches the project fresh on every call so activation changes apply
    /// to the very next request.
    fn active_project(&self, pid: &ProjectId) -> Result<Project, ChatError> {
        let project = self
            .store
            .get_project(pid)?
            .ok_or_else(|| ChatError::UnknownProject(pid.clone()))?;
        if !project.active {
            return Err(ChatError::ProjectInactive(pid.clone()));
        }
        Ok(project)
    }

    fn view(&self, key: ConversationKey) -> Result<SessionView, ChatError> {
        let messages = self.store.load_conversation(&key)?;
        Ok(SessionView {
            conversation_id: key.conversation_id(),
            accepting_input: !self.is_generating(&key),
            key,
            messages,
        })
    }

    /// Instruction for a new conversation: the custom message named by
    /// `system_message_id`, else the project default.
    fn effective_system_message(
        &self,
        project: &Project,
        params: &SessionParameters,
    ) -> Result<String, ChatError> {
        match &params.system_message_id {
            Some(id) => match self.store.get_system_message(id)? {
                Some(record) if record.project_id == project.id => Ok(record.content),
                _ => Err(ChatError::UnknownSystemMessageId(id.clone())),
            },
            None => Ok(project.system_message.clone()),
        }
    }

    /// Persists the system turn of a brand-new conversation.
    fn initialize(
        &self,
        project: &Project,
        params: &SessionParameters,
        key: &ConversationKey,
    ) -> Result<Vec<ChatMessage>, ChatError> {
        let mut messages = self.store.load_conversation(key)?;
        if messages.is_empty() {
            let instruction = self.effective_system_message(project, params)?;
            if !instruction.is_empty() {
                let system = ChatMessage::new(Role::System, instruction, params);
                messages.push(self.store.append_message(key, system)?);
            }
        }
        Ok(messages)
    }

    fn turns(&self, messages: &[ChatMessage]) -> Result<Vec<Turn>, ChatError> {
        messages
            .iter()
            .map(|m| {
                let image = match &m.image_ref {
                    Some(id) => {
                        let (blob, payload) = self.store.get_blob(id)?;
                        Some(ImageAttachment {
                            blob,
                            payload: payload.into(),
                        })
                    }
                    None => None,
                };
                Ok(Turn {
                    role: m.role,
                    content: m.content.clone(),
                    image,
                })
            })
            .collect()
    }

    /// Opens or resumes a conversation.
    ///
    /// A new conversation gets its system turn first, then an opening
    /// assistant turn when `assistant_first` is set on the session or the
    /// project. Existing conversations come back unchanged, so reloading
    /// the chat window is safe.
    pub async fn open_session(&self, params: &SessionParameters) -> Result<SessionView, ChatError> {
        let project = self.active_project(&params.pid)?;
        let spec = self.gateway.resolve_model(&params.model)?;
        let key = params.conversation_key();
        let Some(guard) = self.claim(&key) else {
            return self.view(key);
        };

        let messages = self.initialize(&project, params, &key)?;
        let started = messages.iter().any(|m| m.role != Role::System);
        if (params.assistant_first || project.assistant_first) && !started {
            let mut turns = self.turns(&messages)?;
            if turns.is_empty() {
                turns.push(Turn::new(Role::System, ""));
            }
            let text = self.gateway.complete(&spec, &turns).await?;
            let greeting = ChatMessage::new(Role::Assistant, text, params);
            self.store.append_message(&key, greeting)?;
        }
        drop(guard);
        self.view(key)
    }

    /// Registers a per-participant instruction for an active project.
    /// The content is stored verbatim.
    pub fn register_system_message(
        &self,
        project_id: &ProjectId,
        requested_by: &str,
        content: &str,
    ) -> Result<SystemMessageRecord, ChatError> {
        self.active_project(project_id)?;
        validate_identifier("requested_by", requested_by)?;
        Ok(self.store.put_system_message(NewSystemMessage {
            project_id: project_id.clone(),
            content: content.to_owned(),
            requested_by: requested_by.to_owned(),
        })?)
    }

    /// Conversation state for reloads; no activation check, nothing written.
    pub fn history(&self, params: &SessionParameters) -> Result<SessionView, ChatError> {
        if self.store.get_project(&params.pid)?.is_none() {
            return Err(ChatError::UnknownProject(params.pid.clone()));
        }
        self.view(params.conversation_key())
    }

    fn check_image_allowed(&self, params: &SessionParameters, spec: &ModelSpec) -> Result<(), ChatError> {
        if !params.upload_image {
            return Err(ChatError::ImageUploadDisabled);
        }
        if !spec.supports_vision {
            return Err(ChatError::VisionUnsupported(spec.alias.clone()));
        }
        Ok(())
    }

    /// Stores a participant image for a later [`post_user_message`](Self::post_user_message).
    pub fn upload_image(
        &self,
        params: &SessionParameters,
        payload: &[u8],
        media_type: &str,
    ) -> Result<BlobRef, ChatError> {
        self.active_project(&params.pid)?;
        let spec = self.gateway.resolve_model(&params.model)?;
        self.check_image_allowed(params, &spec)?;
        Ok(self.store.put_blob(payload, media_type)?)
    }

    /// Persists the participant turn and streams the assistant reply.
    ///
    /// Errors returned directly mean nothing was written. Once the stream
    /// is returned the user turn is stored, and the stream always ends with
    /// exactly one [`TurnEvent::Done`] or [`TurnEvent::Failed`]. Dropping
    /// the stream aborts the provider call and stores the partial reply.
    pub async fn post_user_message(
        &self,
        params: &SessionParameters,
        text: &str,
        image: Option<&BlobId>,
    ) -> Result<TurnStream, ChatError> {
        let project = self.active_project(&params.pid)?;
        let spec = self.gateway.resolve_model(&params.model)?;
        if text.trim().is_empty() && image.is_none() {
            return Err(ChatError::EmptyMessage);
        }
        let image_ref = match image {
            Some(id) => {
                self.check_image_allowed(params, &spec)?;
                self.store.get_blob(id)?;
                Some(id.clone())
            }
            None => None,
        };
        let key = params.conversation_key();
        let guard = self.claim(&key).ok_or(ChatError::GenerationInFlight)?;

        let mut messages = self.initialize(&project, params, &key)?;
        if let Some(limit) = project.max_turns {
            let user_turns = messages.iter().filter(|m| m.role == Role::User).count();
            if user_turns >= limit as usize {
                return Err(ChatError::TurnLimitReached(limit));
            }
        }
        let mut user = ChatMessage::new(Role::User, text, params);
        user.image_ref = image_ref;
        messages.push(self.store.append_message(&key, user)?);

        let (tx, rx) = mpsc::channel(64);
        let service = self.clone();
        let params = params.clone();
        tokio::spawn(async move {
            let _guard = guard;
            service.generate(spec, params, key, messages, tx).await;
        });
        Ok(futures::stream::unfold(rx, |mut rx| async move {
            rx.recv().await.map(|event| (event, rx))
        })
        .boxed())
    }

    async fn generate(
        &self,
        spec: ModelSpec,
        params: SessionParameters,
        key: ConversationKey,
        messages: Vec<ChatMessage>,
        tx: mpsc::Sender<TurnEvent>,
    ) {
        let mut text = String::new();
        let outcome: Result<(), ChatError> = async {
            let turns = self.turns(&messages)?;
            let mut stream = self.gateway.complete_stream(&spec, &turns).await?;
            while let Some(chunk) = stream.next().await {
                let chunk = chunk?;
                if !chunk.delta.is_empty() {
                    text.push_str(&chunk.delta);
                    if tx.send(TurnEvent::Delta(chunk.delta)).await.is_err() {
                        return Err(ChatError::Provider(ProviderError::Unavailable(
                            "client disconnected".into(),
                        )));
                    }
                }
                if chunk.finished {
                    return Ok(());
                }
            }
            Err(ChatError::Provider(ProviderError::Unavailable(
                "stream ended without a final chunk".into(),
            )))
        }
        .await;

        let mut reply = ChatMessage::new(Role::Assistant, text, &params);
        let event = match outcome {
            Ok(()) => match self.store.append_message(&key, reply) {
                Ok(stored) => TurnEvent::Done(stored),
                Err(e) => {
                    tracing::error!(error = %e, "failed to persist assistant turn");
                    return;
                }
            },
            Err(error) => {
                reply.content.push_str(TRUNCATION_MARKER);
                reply.truncated = true;
                match self.store.append_message(&key, reply) {
                    Ok(partial) => TurnEvent::Failed { error, partial },
                    Err(e) => {
                        tracing::error!(error = %e, "failed to persist truncated assistant turn");
                        return;
                    }
                }
            }
        };
        let _ = tx.send(event).await;
    }

    /// One-shot completion returned as a string. The submitted turns and
    /// the reply are stored as a conversation with
    /// `experiment_id = "direct_call"`, `participant_id = requested_by` and
    /// a fresh session id.
    pub async fn direct_call(
        &self,
        project_id: &ProjectId,
        requested_by: &str,
        model: &str,
        chat: &[DirectTurn],
    ) -> Result<String, ChatError> {
        self.active_project(project_id)?;
        validate_identifier("requested_by", requested_by)?;
        let spec = self.gateway.resolve_model(model)?;
        if chat.is_empty() {
            return Err(ChatError::EmptyMessage);
        }
        let turns: Vec<Turn> = chat.iter().map(|t| Turn::new(t.role, t.content.clone())).collect();
        let response = self.gateway.complete(&spec, &turns).await?;

        let params = SessionParameters {
            pid: project_id.clone(),
            experiment_id: DIRECT_CALL_EXPERIMENT.to_owned(),
            participant_id: requested_by.to_owned(),
            model: model.to_owned(),
            session_id: Some(uuid::Uuid::new_v4().simple().to_string()),
            system_message_id: None,
            upload_image: false,
            assistant_first: false,
            extra: Default::default(),
        };
        let key = params.conversation_key();
        for turn in chat {
            self.store
                .append_message(&key, ChatMessage::new(turn.role, turn.content.clone(), &params))?;
        }
        self.store
            .append_message(&key, ChatMessage::new(Role::Assistant, response.clone(), &params))?;
        Ok(response)
    }

    /// Every session of the triple, ordered by session id then append order.
    /// Unknown triples (including malformed project ids) yield no sessions.
    pub fn download_chat(
        &self,
        pid: &str,
        experiment_id: &str,
        participant_id: &str,
    ) -> Result<Transcript, ChatError> {
        let Ok(pid) = pid.parse::<ProjectId>() else {
            return Ok(Transcript { sessions: vec![] });
        };
        let filter = ConversationFilter {
            project_id: Some(pid),
            experiment_id: Some(experiment_id.to_owned()),
            participant_id: Some(participant_id.to_owned()),
            ..Default::default()
        };
        let mut keys: Vec<ConversationKey> = self
            .store
            .query_conversations(&filter)?
            .into_iter()
            .map(|row| row.key)
            .collect();
        keys.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let sessions = keys
            .into_iter()
            .map(|key| {
                Ok(SessionTranscript {
                    messages: self.store.load_conversation(&key)?,
                    session_id: key.session_id,
                })
            })
            .collect::<Result<_, ChatError>>()?;
        Ok(Transcript { sessions })
    }
}
