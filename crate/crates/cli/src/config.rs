//! Tool configuration: named endpoint profiles and defaults.
//!
//! Loaded from `--config <path>` or the `RELVAL_CONFIG` environment
//! variable. Auth environment variables named by a profile are resolved
//! when the profile is used, not at load time.

use std::collections::BTreeMap;
use std::path::Path;

use relval_core::agents::LlmEndpointConfig;
use relval_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RepoConfig {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    /// Endpoint profiles addressable as `--agent llm:<name>`.
    #[serde(default)]
    pub endpoints: BTreeMap<String, LlmEndpointConfig>,
    #[serde(default)]
    pub default_seed: Option<u64>,
}

fn default_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

impl RepoConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RepoConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Load from the explicit flag, else `RELVAL_CONFIG`, else defaults.
    pub fn resolve(flag: Option<&Path>) -> Result<Self> {
        if let Some(path) = flag {
            return Self::load(path);
        }
        if let Ok(path) = std::env::var("RELVAL_CONFIG") {
            return Self::load(Path::new(&path));
        }
        Ok(RepoConfig::default())
    }

    pub fn endpoint(&self, name: &str) -> Result<&LlmEndpointConfig> {
        self.endpoints.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown endpoint profile {name}; configure it under \"endpoints\" in the config file"
            ))
        })
    }
}
