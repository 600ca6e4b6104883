use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use url::Url;

use super::mock::MockOptions;
use super::ProviderError;

const DEFAULT_TIMEOUT_SECS: u64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireProtocol {
    #[serde(rename = "openai-chat")]
    OpenAiChat,
    #[serde(rename = "mock")]
    Mock,
}

/// How the credential is presented upstream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuthScheme {
    /// `Authorization: Bearer <key>`
    #[default]
    Bearer,
    /// `api-key: <key>` (Azure OpenAI)
    ApiKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderProfile {
    pub name: String,
    pub wire_protocol: WireProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<Url>,
    /// Name of the environment variable holding the API key. The value is
    /// read on every call and never stored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env_var: Option<String>,
    #[serde(default = "default_timeout")]
    pub request_timeout: u64,
    #[serde(default)]
    pub auth_scheme: AuthScheme,
    /// Extra query parameters appended to every upstream URL, e.g. `api-version`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub query: BTreeMap<String, String>,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Value of the `model` query parameter.
    pub alias: String,
    pub provider_backend: String,
    pub remote_model_name: String,
    #[serde(default)]
    pub supports_vision: bool,
    #[serde(default = "default_true")]
    pub supports_streaming: bool,
    /// Behaviour of mock-protocol models; ignored by real providers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockOptions>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("registry is not a JSON object with `providers` and `models` arrays: {0}")]
    Shape(String),
    #[error("provider entry `{entry}`: {detail}")]
    Provider { entry: String, detail: String },
    #[error("model entry `{entry}`: {detail}")]
    Model { entry: String, detail: String },
    #[error("cannot read registry file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Deserialize)]
struct RawRegistry {
    #[serde(default)]
    providers: Vec<serde_json::Value>,
    #[serde(default)]
    models: Vec<serde_json::Value>,
}

fn entry_name(value: &serde_json::Value, field: &str, index: usize) -> String {
    value
        .get(field)
        .and_then(|v| v.as_str())
        .map(str::to_owned)
        .unwrap_or_else(|| format!("#{index}"))
}

/// Model aliases and provider profiles loaded from configuration.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    providers: IndexMap<String, ProviderProfile>,
    models: IndexMap<String, ModelSpec>,
}

impl Registry {
    /// Parses and validates a registry document. Any malformed entry fails
    /// the whole load with that entry's name.
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let raw: RawRegistry =
            serde_json::from_str(text).map_err(|e| RegistryError::Shape(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, RegistryError> {
        let raw: RawRegistry =
            serde_json::from_value(value).map_err(|e| RegistryError::Shape(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn from_raw(raw: RawRegistry) -> Result<Self, RegistryError> {
        let mut registry = Registry::default();
        for (i, value) in raw.providers.into_iter().enumerate() {
            let entry = entry_name(&value, "name", i);
            let fail = |detail: String| RegistryError::Provider {
                entry: entry.clone(),
                detail,
            };
            let profile: ProviderProfile =
                serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
            if profile.wire_protocol == WireProtocol::OpenAiChat && profile.base_url.is_none() {
                return Err(fail("openai-chat providers need a base_url".into()));
            }
            if profile.request_timeout == 0 {
                return Err(fail("request_timeout must be positive".into()));
            }
            if registry.providers.contains_key(&profile.name) {
                return Err(fail("duplicate provider name".into()));
            }
            registry.providers.insert(profile.name.clone(), profile);
        }
        for (i, value) in raw.models.into_iter().enumerate() {
            let entry = entry_name(&value, "alias", i);
            let fail = |detail: String| RegistryError::Model {
                entry: entry.clone(),
                detail,
            };
            let spec: ModelSpec = serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
            if spec.alias.is_empty() {
                return Err(fail("alias must not be empty".into()));
            }
            let Some(profile) = registry.providers.get(&spec.provider_backend) else {
                return Err(fail(format!("unknown provider_backend `{}`", spec.provider_backend)));
            };
            if spec.mock.is_some() && profile.wire_protocol != WireProtocol::Mock {
                return Err(fail("mock options on a non-mock provider".into()));
            }
            if let Some(options) = &spec.mock {
                if options.chunk_size == 0 {
                    return Err(fail("mock chunk_size must be positive".into()));
                }
            }
            if registry.models.contains_key(&spec.alias) {
                return Err(fail("duplicate alias".into()));
            }
            registry.models.insert(spec.alias.clone(), spec);
        }
        Ok(registry)
    }

    pub fn resolve_model(&self, alias: &str) -> Result<&ModelSpec, ProviderError> {
        self.models
            .get(alias)
            .ok_or_else(|| ProviderError::UnknownModel {
                alias: alias.to_owned(),
                available: self.aliases().map(str::to_owned).collect(),
            })
    }

    pub fn provider(&self, name: &str) -> Option<&ProviderProfile> {
        self.providers.get(name)
    }

    pub fn aliases(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelSpec> {
        self.models.values()
    }

    pub fn providers(&self) -> impl Iterator<Item = &ProviderProfile> {
        self.providers.values()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_openai_and_mock_entries() {
        let registry = Registry::from_json(
            r#"{
              "providers": [
                {"name": "azure", "wire_protocol": "openai-chat",
                 "base_url": "https://example.openai.azure.com/openai/deployments/gpt4o",
                 "credential_env_var": "AZURE_OPENAI_API_KEY", "auth_scheme": "api-key",
                 "query": {"api-version": "2024-06-01"}},
                {"name": "mock", "wire_protocol": "mock"}
              ],
              "models": [
                {"alias": "gpt4o", "provider_backend": "azure", "remote_model_name": "gpt-4o",
                 "supports_vision": true},
                {"alias": "mock-echo", "provider_backend": "mock", "remote_model_name": "echo"}
              ]
            }"#,
        )
        .unwrap();
        let gpt = registry.resolve_model("gpt4o").unwrap();
        assert_eq!(gpt.provider_backend, "azure");
        assert!(gpt.supports_streaming);
        let azure = registry.provider("azure").unwrap();
        assert_eq!(azure.request_timeout, 60);
        assert_eq!(azure.auth_scheme, AuthScheme::ApiKey);
        assert_eq!(registry.aliases().collect::<Vec<_>>(), ["gpt4o", "mock-echo"]);
    }

    #[test]
    fn malformed_entry_names_itself() {
        let err = Registry::from_json(
            r#"{"providers": [{"name": "mock", "wire_protocol": "mock"}],
                "models": [
                  {"alias": "fine", "provider_backend": "mock", "remote_model_name": "echo"},
                  {"alias": "broken", "provider_backend": "mock", "supports_vision": "yes"}
                ]}"#,
        )
        .unwrap_err();
        let message = err.to_string();
        assert!(message.contains("`broken`"), "{message}");

        let err = Registry::from_json(
            r#"{"providers": [{"name": "mock", "wire_protocol": "mock"}],
                "models": [{"alias": "orphan", "provider_backend": "nowhere", "remote_model_name": "x"}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("`orphan`"));

        let err = Registry::from_json(
            r#"{"providers": [{"name": "openai", "wire_protocol": "openai-chat"}], "models": []}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("`openai`"));
    }

    #[test]
    fn duplicate_alias_rejected() {
        let err = Registry::from_json(
            r#"{"providers": [{"name": "mock", "wire_protocol": "mock"}],
                "models": [
                  {"alias": "a", "provider_backend": "mock", "remote_model_name": "echo"},
                  {"alias": "a", "provider_backend": "mock", "remote_model_name": "echo"}
                ]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, RegistryError::Model { ref entry, .. } if entry == "a"));
    }
}
