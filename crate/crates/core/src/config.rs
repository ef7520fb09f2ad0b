//! Engine configuration: a TOML file plus environment overrides.
//!
//! The file is found through `KINETRAIL_CONFIG`; every field has a default,
//! so no file at all is a valid configuration. Environment variables win
//! over the file:
//!
//! | variable | field |
//! |---|---|
//! | `KINETRAIL_INDEX` | `index_path` |
//! | `KINETRAIL_BIND` | `server.bind` |
//! | `KINETRAIL_PORT` | `server.port` |
//! | `KINETRAIL_PROVIDERS` | `providers.kind` (`mock` or `remote`) |
//! | `KINETRAIL_EMBEDDING_URL`, `_TOKEN`, `_MODEL` | `providers.embedding` |
//! | `KINETRAIL_LLM_URL`, `_TOKEN`, `_MODEL` | `providers.llm` |

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::DEFAULT_TRAIL_STEPS;
use crate::search::SearchConfig;
use crate::semantics::{
    EmbeddingProvider, HashEmbedder, LlmProvider, MockLlm, Prompts, RemoteConfig, RemoteEmbedder,
    RemoteLlm, MOCK_EMBEDDING_DIM,
};

pub const CONFIG_ENV: &str = "KINETRAIL_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub index_path: PathBuf,
    pub trail_steps: usize,
    pub server: ServerConfig,
    pub search: SearchConfig,
    pub providers: ProviderConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            index_path: PathBuf::from("index.json"),
            trail_steps: DEFAULT_TRAIL_STEPS,
            server: ServerConfig::default(),
            search: SearchConfig::default(),
            providers: ProviderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub embedding: Option<RemoteConfig>,
    pub llm: Option<RemoteConfig>,
    pub embedding_dim: usize,
    pub max_in_flight: usize,
    /// Directory with `normalize.txt` and `expand.txt`; built-in prompts
    /// are used when unset.
    pub prompts_dir: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            embedding: None,
            llm: None,
            embedding_dim: MOCK_EMBEDDING_DIM,
            max_in_flight: 4,
            prompts_dir: None,
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Reads the file named by `KINETRAIL_CONFIG` (if any) and applies
    /// environment overrides.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut config = match std::env::var_os(CONFIG_ENV) {
            Some(path) => Self::load_file(Path::new(&path))?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        config.check()?;
        Ok(config)
    }

    /// Applies overrides from `lookup`, which maps variable names to values.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup("KINETRAIL_INDEX") {
            self.index_path = PathBuf::from(v);
        }
        if let Some(v) = lookup("KINETRAIL_BIND") {
            self.server.bind = v;
        }
        if let Some(v) = lookup("KINETRAIL_PORT") {
            self.server.port = v
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("KINETRAIL_PORT: bad port {v:?}")))?;
        }
        if let Some(v) = lookup("KINETRAIL_PROVIDERS") {
            self.providers.kind = match v.as_str() {
                "mock" => ProviderKind::Mock,
                "remote" => ProviderKind::Remote,
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "KINETRAIL_PROVIDERS: expected mock or remote, got {other:?}"
                    )))
                }
            };
        }
        for (prefix, slot) in [
            ("KINETRAIL_EMBEDDING", &mut self.providers.embedding),
            ("KINETRAIL_LLM", &mut self.providers.llm),
        ] {
            if let Some(url) = lookup(&format!("{prefix}_URL")) {
                let mut remote = slot.take().unwrap_or(RemoteConfig {
                    endpoint: String::new(),
                    token: None,
                    model: String::new(),
                    timeout_secs: 10.0,
                });
                remote.endpoint = url;
                if let Some(t) = lookup(&format!("{prefix}_TOKEN")) {
                    remote.token = Some(t);
                }
                if let Some(m) = lookup(&format!("{prefix}_MODEL")) {
                    remote.model = m;
                }
                *slot = Some(remote);
            }
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        self.search
            .check()
            .map_err(|e| ConfigError::Invalid(format!("search: {e}")))?;
        if self.trail_steps == 0 {
            return Err(ConfigError::Invalid("trail_steps must be positive".into()));
        }
        if self.providers.embedding_dim == 0 || self.providers.max_in_flight == 0 {
            return Err(ConfigError::Invalid(
                "providers.embedding_dim and providers.max_in_flight must be positive".into(),
            ));
        }
        if self.providers.kind == ProviderKind::Remote
            && (self.providers.embedding.is_none() || self.providers.llm.is_none())
        {
            return Err(ConfigError::Invalid(
                "remote providers need both providers.embedding and providers.llm".into(),
            ));
        }
        Ok(())
    }

    /// Instantiates the configured language model and embedder.
    pub fn providers(&self) -> Result<(Arc<dyn LlmProvider>, Arc<dyn EmbeddingProvider>), ConfigError> {
        let p = &self.providers;
        match (p.kind, &p.llm, &p.embedding) {
            (ProviderKind::Mock, _, _) => Ok((
                Arc::new(MockLlm::new()),
                Arc::new(HashEmbedder::new(p.embedding_dim)),
            )),
            (ProviderKind::Remote, Some(llm), Some(emb)) => {
                let prompts = match &p.prompts_dir {
                    Some(dir) => Prompts::load(dir).map_err(|source| ConfigError::Io {
                        path: dir.clone(),
                        source,
                    })?,
                    None => Prompts::default(),
                };
                Ok((
                    Arc::new(RemoteLlm::new(llm.clone(), prompts)),
                    Arc::new(RemoteEmbedder::new(emb.clone(), p.embedding_dim)),
                ))
            }
            _ => Err(ConfigError::Invalid(
                "remote providers need both providers.embedding and providers.llm".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults() {
        let c = EngineConfig::default();
        assert_eq!(c.search.top_k, 4);
        assert_eq!(c.trail_steps, 8);
        assert_eq!(EngineConfig::from_toml("", Path::new("x")).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(EngineConfig::from_toml("top_k = 3", Path::new("x")).is_err());
        let c = EngineConfig::from_toml("[search]\ntop_k = 3", Path::new("x")).unwrap();
        assert_eq!(c.search.top_k, 3);
    }

    #[test]
    fn env_overrides() {
        let env: HashMap<&str, &str> = [
            ("KINETRAIL_PORT", "9000"),
            ("KINETRAIL_PROVIDERS", "remote"),
            ("KINETRAIL_LLM_URL", "http://llm"),
            ("KINETRAIL_EMBEDDING_URL", "http://emb"),
            ("KINETRAIL_EMBEDDING_TOKEN", "secret"),
        ]
        .into_iter()
        .collect();
        let mut c = EngineConfig::default();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.server.port, 9000);
        assert_eq!(c.providers.kind, ProviderKind::Remote);
        assert_eq!(c.providers.llm.as_ref().unwrap().endpoint, "http://llm");
        assert!(c.check().is_ok());
        assert!(!format!("{c:?}").contains("secret"));

        let mut bad = EngineConfig::default();
        assert!(bad.apply_env(|k| (k == "KINETRAIL_PORT").then(|| "x".into())).is_err());
    }

    #[test]
    fn remote_without_endpoints_rejected() {
        let mut c = EngineConfig::default();
        c.providers.kind = ProviderKind::Remote;
        assert!(c.check().is_err());
    }
}
