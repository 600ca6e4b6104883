//! Deployment configuration: one JSON file plus environment variables for
//! secrets.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chatbridge_core::provider::RegistryError;
use chatbridge_core::store::DEFAULT_MAX_BLOB_BYTES;
use chatbridge_core::{AdminCredentials, FileStore, MemoryStore, Registry, Store, StoreError};
use serde::Deserialize;

use crate::{AppState, HttpSettings};

pub const ADMIN_EMAIL_VAR: &str = "CHATBRIDGE_ADMIN_EMAIL";
pub const ADMIN_PASSWORD_VAR: &str = "CHATBRIDGE_ADMIN_PASSWORD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Profile {
    /// Memory store allowed, any origin may embed when no allowlist is set.
    #[default]
    Dev,
    /// Requires a file store, admin credentials and an origin allowlist.
    Prod,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StoreConfig {
    Memory,
    File { path: PathBuf },
}

/// Either a path to a registry file or the registry document inline.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RegistrySource {
    Path(PathBuf),
    Inline(serde_json::Value),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    #[serde(default = "default_store")]
    pub store: StoreConfig,
    pub registry: RegistrySource,
    /// Origins allowed to embed the chat page and call the API from a browser.
    #[serde(default)]
    pub allowed_origins: Vec<String>,
    #[serde(default = "default_true")]
    pub download_requires_token: bool,
    #[serde(default = "default_ttl")]
    pub token_ttl_secs: u64,
    #[serde(default = "default_max_blob")]
    pub max_blob_bytes: usize,
    #[serde(default)]
    pub default_provider_backend: Option<String>,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_store() -> StoreConfig {
    StoreConfig::Memory
}

fn default_true() -> bool {
    true
}

fn default_ttl() -> u64 {
    chatbridge_core::admin::DEFAULT_TOKEN_TTL.as_secs()
}

fn default_max_blob() -> usize {
    DEFAULT_MAX_BLOB_BYTES
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot open store: {0}")]
    Store(#[from] StoreError),
    #[error("default_provider_backend `{0}` is not a provider in the registry")]
    UnknownBackend(String),
    #[error("prod profile: {0}")]
    Profile(&'static str),
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Relative store and registry paths are resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let StoreConfig::File { path } = &mut config.store {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let RegistrySource::Path(path) = &mut config.registry {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        Ok(config)
    }

    pub fn registry(&self) -> Result<Registry, ConfigError> {
        let registry = match &self.registry {
            RegistrySource::Path(path) => Registry::from_file(path)?,
            RegistrySource::Inline(value) => Registry::from_value(value.clone())?,
        };
        if let Some(backend) = &self.default_provider_backend {
            if registry.provider(backend).is_none() {
                return Err(ConfigError::UnknownBackend(backend.clone()));
            }
        }
        Ok(registry)
    }

    fn credentials() -> Option<AdminCredentials> {
        let email = std::env::var(ADMIN_EMAIL_VAR).ok().filter(|v| !v.is_empty())?;
        let password = std::env::var(ADMIN_PASSWORD_VAR).ok().filter(|v| !v.is_empty())?;
        Some(AdminCredentials::new(email, password))
    }

    /// Checks everything `build` needs without opening the store.
    pub fn validate(&self, profile: Profile) -> Result<Registry, ConfigError> {
        let registry = self.registry()?;
        if profile == Profile::Prod {
            if self.store == StoreConfig::Memory {
                return Err(ConfigError::Profile("a file store is required"));
            }
            if Self::credentials().is_none() {
                return Err(ConfigError::Profile("admin credentials are not set in the environment"));
            }
            if self.allowed_origins.is_empty() {
                return Err(ConfigError::Profile("allowed_origins must not be empty"));
            }
        }
        Ok(registry)
    }

    pub fn build(&self, profile: Profile) -> Result<AppState, ConfigError> {
        let registry = self.validate(profile)?;
        let store: Arc<dyn Store> = match &self.store {
            StoreConfig::Memory => Arc::new(MemoryStore::with_max_blob_bytes(self.max_blob_bytes)),
            StoreConfig::File { path } => Arc::new(FileStore::open_with_max_blob_bytes(path, self.max_blob_bytes)?),
        };
        let credentials = Self::credentials();
        if credentials.is_none() {
            tracing::warn!("{ADMIN_EMAIL_VAR} / {ADMIN_PASSWORD_VAR} not set; admin endpoints will refuse every login");
        }
        let settings = HttpSettings {
            allowed_origins: self.allowed_origins.clone(),
            download_requires_token: self.download_requires_token,
            max_blob_bytes: self.max_blob_bytes,
        };
        Ok(AppState::builder(store, registry)
            .credentials(credentials)
            .token_ttl(Duration::from_secs(self.token_ttl_secs))
            .default_backend(self.default_provider_backend.clone())
            .settings(settings)
            .build())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REGISTRY: &str = r#"{"providers": [{"name": "mock", "wire_protocol": "mock"}],
        "models": [{"alias": "mock-echo", "provider_backend": "mock", "remote_model_name": "echo"}]}"#;

    #[test]
    fn defaults() {
        let config = Config::from_json(&format!(r#"{{"registry": {REGISTRY}}}"#)).unwrap();
        assert_eq!(config.store, StoreConfig::Memory);
        assert!(config.download_requires_token);
        assert_eq!(config.token_ttl_secs, 12 * 3600);
        assert_eq!(config.max_blob_bytes, 10 * 1024 * 1024);
        assert!(config.validate(Profile::Dev).is_ok());
        assert!(matches!(config.validate(Profile::Prod), Err(ConfigError::Profile(_))));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("models.json"), REGISTRY).unwrap();
        let path = dir.path().join("chatbridge.json");
        std::fs::write(&path, r#"{"registry": "models.json", "store": {"kind": "file", "path": "data"}}"#).unwrap();
        let config = Config::load(&path).unwrap();
        assert_eq!(config.store, StoreConfig::File { path: dir.path().join("data") });
        assert_eq!(config.registry().unwrap().aliases().collect::<Vec<_>>(), ["mock-echo"]);
    }

    #[test]
    fn unknown_fields_and_backends_are_rejected() {
        assert!(Config::from_json(&format!(r#"{{"registry": {REGISTRY}, "bnid": "x"}}"#)).is_err());
        let config =
            Config::from_json(&format!(r#"{{"registry": {REGISTRY}, "default_provider_backend": "azure"}}"#)).unwrap();
        assert!(matches!(config.registry(), Err(ConfigError::UnknownBackend(_))));
    }
}
