//! Domain types shared by every backend module.
//!
//! Everything here is an immutable value. Field names follow the wire
//! contract used by experiment platforms (`project_id`, `requested_by`,
//! `experiment_id`, `participant_id`, `session_id`, `system_message_id`,
//! `upload_image`), so these types serialize directly into HTTP bodies and
//! stored records.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Maximum length of a project identifier.
pub const PROJECT_ID_MAX_LEN: usize = 64;

/// Maximum length in bytes of experiment, participant and session identifiers.
pub const IDENTIFIER_MAX_LEN: usize = 256;

/// Session used when the embedding page does not pass a `session_id`.
pub const DEFAULT_SESSION_ID: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("invalid project id at position {position}: {reason}")]
    InvalidProjectId { position: usize, reason: &'static str },
    #[error("missing required parameter `{0}`")]
    MissingParameter(&'static str),
    #[error("parameter `{key}` must be `true` or `false`, got `{value}`")]
    MalformedBoolean { key: &'static str, value: String },
    #[error("parameter `{0}` given more than once")]
    DuplicateParameter(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidParameter { key: String, reason: &'static str },
    #[error("invalid e-mail address")]
    InvalidEmail,
    #[error("malformed conversation id")]
    MalformedConversationId,
}

/// Lowercase project identifier: `[a-z][a-z0-9_]*`, at most 64 characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProjectId(String);

impl ProjectId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Checks `raw` against the project identifier grammar.
pub fn validate_project_id(raw: &str) -> Result<ProjectId, DomainError> {
    let mut chars = raw.chars().enumerate();
    match chars.next() {
        None => {
            return Err(DomainError::InvalidProjectId {
                position: 0,
                reason: "empty identifier",
            })
        }
        Some((_, c)) if !c.is_ascii_lowercase() => {
            return Err(DomainError::InvalidProjectId {
                position: 0,
                reason: "must start with a lowercase letter",
            })
        }
        Some(_) => {}
    }
    for (position, c) in chars {
        if position >= PROJECT_ID_MAX_LEN {
            return Err(DomainError::InvalidProjectId {
                position,
                reason: "longer than 64 characters",
            });
        }
        if !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
            return Err(DomainError::InvalidProjectId {
                position,
                reason: "only small letters, digits and underscores are allowed",
            });
        }
    }
    Ok(ProjectId(raw.to_owned()))
}

impl FromStr for ProjectId {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        validate_project_id(s)
    }
}

impl TryFrom<String> for ProjectId {
    type Error = DomainError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        validate_project_id(&value)
    }
}

impl From<ProjectId> for String {
    fn from(id: ProjectId) -> Self {
        id.0
    }
}

impl fmt::Display for ProjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Experiment, participant and session identifiers are free-form but must be
/// non-empty, bounded, and free of control characters.
pub fn validate_identifier(key: &str, value: &str) -> Result<(), DomainError> {
    let invalid = |reason| DomainError::InvalidParameter {
        key: key.to_owned(),
        reason,
    };
    if value.is_empty() {
        return Err(invalid("must not be empty"));
    }
    if value.len() > IDENTIFIER_MAX_LEN {
        return Err(invalid("longer than 256 bytes"));
    }
    if value.chars().any(char::is_control) {
        return Err(invalid("contains control characters"));
    }
    Ok(())
}

/// Accepts addresses with exactly one `@` and non-empty parts on both sides.
pub fn validate_email(raw: &str) -> Result<(), DomainError> {
    let mut parts = raw.split('@');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(local), Some(domain), None)
            if !local.is_empty()
                && !domain.is_empty()
                && !raw.chars().any(|c| c.is_whitespace() || c.is_control()) =>
        {
            Ok(())
        }
        _ => Err(DomainError::InvalidEmail),
    }
}

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            /// Fresh random id (122 bits of entropy, 32 URL-safe characters).
            pub fn generate() -> Self {
                Self(uuid::Uuid::new_v4().simple().to_string())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl FromStr for $name {
            type Err = DomainError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let url_safe = s
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
                if (16..=128).contains(&s.len()) && url_safe {
                    Ok(Self(s.to_owned()))
                } else {
                    Err(DomainError::InvalidParameter {
                        key: stringify!($name).to_owned(),
                        reason: "expected 16 to 128 URL-safe characters",
                    })
                }
            }
        }

        impl TryFrom<String> for $name {
            type Error = DomainError;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                value.parse()
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> Self {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

opaque_id!(
    /// Identifier of one stored chat message.
    MessageId
);
opaque_id!(
    /// Identifier returned when a custom system message is registered.
    SystemMessageId
);
opaque_id!(
    /// Identifier of an uploaded image.
    BlobId
);

/// A registered study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    #[serde(rename = "project_id")]
    pub id: ProjectId,
    pub requested_by: String,
    pub system_message: String,
    pub active: bool,
    pub provider_backend: String,
    /// Default for sessions that do not pass `assistant_first`.
    #[serde(default)]
    pub assistant_first: bool,
    /// Cap on participant turns per conversation; `None` means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
    pub created_at: DateTime<Utc>,
}

/// Fields supplied when registering a project; the store assigns the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewProject {
    pub id: ProjectId,
    pub requested_by: String,
    pub system_message: String,
    pub provider_backend: String,
    pub assistant_first: bool,
    pub max_turns: Option<u32>,
}

/// A stored instruction addressable by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemMessageRecord {
    pub id: SystemMessageId,
    pub project_id: ProjectId,
    /// Stored verbatim; `{{placeholder}}` text is never substituted.
    pub content: String,
    pub requested_by: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewSystemMessage {
    pub project_id: ProjectId,
    pub content: String,
    pub requested_by: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The query-string contract binding a chat window to a project,
/// experiment, participant and model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionParameters {
    pub pid: ProjectId,
    pub experiment_id: String,
    pub participant_id: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_message_id: Option<SystemMessageId>,
    #[serde(default)]
    pub upload_image: bool,
    #[serde(default)]
    pub assistant_first: bool,
    /// Additional parameters in arrival order.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub extra: IndexMap<String, String>,
}

const NAMED_PARAMETERS: [&str; 8] = [
    "pid",
    "experiment_id",
    "participant_id",
    "model",
    "session_id",
    "system_message_id",
    "upload_image",
    "assistant_first",
];

fn parse_bool(key: &'static str, value: &str) -> Result<bool, DomainError> {
    if value.eq_ignore_ascii_case("true") {
        Ok(true)
    } else if value.eq_ignore_ascii_case("false") {
        Ok(false)
    } else {
        Err(DomainError::MalformedBoolean {
            key,
            value: value.to_owned(),
        })
    }
}

/// Extracts session parameters from decoded query pairs.
///
/// Unknown keys end up in `extra` in the order they arrived. Every key may
/// appear at most once.
pub fn parse_session_parameters<I, K, V>(query: I) -> Result<SessionParameters, DomainError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut named: [Option<String>; 8] = Default::default();
    let mut extra = IndexMap::new();
    for (key, value) in query {
        let (key, value) = (key.as_ref(), value.as_ref());
        match NAMED_PARAMETERS.iter().position(|n| *n == key) {
            Some(i) => {
                if named[i].replace(value.to_owned()).is_some() {
                    return Err(DomainError::DuplicateParameter(key.to_owned()));
                }
            }
            None => {
                if extra.insert(key.to_owned(), value.to_owned()).is_some() {
                    return Err(DomainError::DuplicateParameter(key.to_owned()));
                }
            }
        }
    }
    let [pid, experiment_id, participant_id, model, session_id, system_message_id, upload_image, assistant_first] =
        named;

    let required = |value: Option<String>, key: &'static str| match value {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(DomainError::MissingParameter(key)),
    };
    let pid = validate_project_id(&required(pid, "pid")?)?;
    let experiment_id = required(experiment_id, "experiment_id")?;
    validate_identifier("experiment_id", &experiment_id)?;
    let participant_id = required(participant_id, "participant_id")?;
    validate_identifier("participant_id", &participant_id)?;
    let model = required(model, "model")?;
    validate_identifier("model", &model)?;

    let session_id = session_id.filter(|s| !s.is_empty());
    if let Some(session_id) = &session_id {
        validate_identifier("session_id", session_id)?;
    }
    let system_message_id = system_message_id
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| DomainError::InvalidParameter {
                key: "system_message_id".to_owned(),
                reason: "expected 16 to 128 URL-safe characters",
            })
        })
        .transpose()?;
    let upload_image = upload_image
        .map(|v| parse_bool("upload_image", &v))
        .transpose()?
        .unwrap_or(false);
    let assistant_first = assistant_first
        .map(|v| parse_bool("assistant_first", &v))
        .transpose()?
        .unwrap_or(false);

    Ok(SessionParameters {
        pid,
        experiment_id,
        participant_id,
        model,
        session_id,
        system_message_id,
        upload_image,
        assistant_first,
        extra,
    })
}

impl SessionParameters {
    /// Query pairs that parse back into `self`: named fields first, then
    /// the extras in their original order.
    pub fn to_query_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("pid".to_owned(), self.pid.to_string()),
            ("experiment_id".to_owned(), self.experiment_id.clone()),
            ("participant_id".to_owned(), self.participant_id.clone()),
            ("model".to_owned(), self.model.clone()),
        ];
        if let Some(session_id) = &self.session_id {
            pairs.push(("session_id".to_owned(), session_id.clone()));
        }
        if let Some(id) = &self.system_message_id {
            pairs.push(("system_message_id".to_owned(), id.to_string()));
        }
        pairs.push(("upload_image".to_owned(), self.upload_image.to_string()));
        pairs.push((
            "assistant_first".to_owned(),
            self.assistant_first.to_string(),
        ));
        pairs.extend(self.extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        pairs
    }

    /// URL-encoded query string, suitable for an iframe `src`.
    pub fn to_query_string(&self) -> String {
        url::form_urlencoded::Serializer::new(String::new())
            .extend_pairs(self.to_query_pairs())
            .finish()
    }

    pub fn conversation_key(&self) -> ConversationKey {
        conversation_key(self)
    }
}

/// Identity under which the turns of one chat are grouped and exported.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConversationKey {
    pub pid: ProjectId,
    pub experiment_id: String,
    pub participant_id: String,
    pub session_id: String,
}

/// Builds the conversation key; an absent `session_id` maps to `"default"`.
pub fn conversation_key(params: &SessionParameters) -> ConversationKey {
    ConversationKey {
        pid: params.pid.clone(),
        experiment_id: params.experiment_id.clone(),
        participant_id: params.participant_id.clone(),
        session_id: params
            .session_id
            .clone()
            .unwrap_or_else(|| DEFAULT_SESSION_ID.to_owned()),
    }
}

// Identifiers never contain control characters, so the unit separator
// cannot occur inside a component.
const KEY_SEPARATOR: char = '\u{1f}';

impl ConversationKey {
    /// Opaque URL-safe id used by the admin API to address one conversation.
    pub fn conversation_id(&self) -> String {
        let joined = [
            self.pid.as_str(),
            &self.experiment_id,
            &self.participant_id,
            &self.session_id,
        ]
        .join(&KEY_SEPARATOR.to_string());
        URL_SAFE_NO_PAD.encode(joined)
    }

    pub fn from_conversation_id(id: &str) -> Result<Self, DomainError> {
        let bytes = URL_SAFE_NO_PAD
            .decode(id)
            .map_err(|_| DomainError::MalformedConversationId)?;
        let joined = String::from_utf8(bytes).map_err(|_| DomainError::MalformedConversationId)?;
        let parts: Vec<&str> = joined.split(KEY_SEPARATOR).collect();
        let [pid, experiment_id, participant_id, session_id] = parts[..] else {
            return Err(DomainError::MalformedConversationId);
        };
        let pid = validate_project_id(pid).map_err(|_| DomainError::MalformedConversationId)?;
        for part in [experiment_id, participant_id, session_id] {
            validate_identifier("conversation_id", part)
                .map_err(|_| DomainError::MalformedConversationId)?;
        }
        Ok(Self {
            pid,
            experiment_id: experiment_id.to_owned(),
            participant_id: participant_id.to_owned(),
            session_id: session_id.to_owned(),
        })
    }

    /// True when `params` resolves to this key.
    pub fn matches(&self, params: &SessionParameters) -> bool {
        self.pid == params.pid
            && self.experiment_id == params.experiment_id
            && self.participant_id == params.participant_id
            && params.session_id.as_deref().unwrap_or(DEFAULT_SESSION_ID) == self.session_id
    }
}

/// One stored turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub message_id: MessageId,
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<BlobId>,
    pub timestamp: DateTime<Utc>,
    pub model: String,
    pub params: SessionParameters,
    /// Set when the provider stream failed before completion.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>, params: &SessionParameters) -> Self {
        Self {
            message_id: MessageId::generate(),
            role,
            content: content.into(),
            image_ref: None,
            timestamp: Utc::now(),
            model: params.model.clone(),
            params: params.clone(),
            truncated: false,
        }
    }
}
