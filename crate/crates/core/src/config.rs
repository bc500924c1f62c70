//! Service configuration file (TOML).
//!
//! ```toml
//! listen = "127.0.0.1:7878"
//! ws_listen = "127.0.0.1:7879"
//! store_dir = "data"
//!
//! [server]
//! heartbeat_interval_ms = 5000
//! missed_heartbeats = 2
//! viewer_buffer = 256
//!
//! [server.default_session]
//! source_lang = "en"
//! target_lang = "ja"
//! target_sigma = 0.6667
//!
//! [[providers]]
//! provider_id = "mock-asr"
//! kind = "asr"
//! mode = "mock"
//! params = { fixtures = "fixtures/corpus.json" }
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::ProviderDescriptor;
use crate::server::ServerSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: Option<String>,
    pub ws_listen: Option<String>,
    /// Directory of the paired-data store; collection is off without one.
    pub store_dir: Option<PathBuf>,
    pub server: ServerSettings,
    pub providers: Vec<ProviderDescriptor>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn from_toml_str(raw: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&raw).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn store_path(&self) -> Option<PathBuf> {
        self.store_dir.as_deref().map(|p| self.resolve(p))
    }
}
