use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::engine::EngineConfig;
use crate::provider::{HttpProvider, HttpProviderConfig, Provider, ScriptedProvider};

/// `pipewright.toml`:
///
/// ```toml
/// data_dir = "pipewright-data"
/// fixtures_root = "fixtures"
///
/// [engine]
/// question_budget = 5
/// synthesis_threshold = 0.35
///
/// [provider]
/// kind = "http"
/// base_url = "http://localhost:8000/v1"
/// model = "gpt-4o"
/// credential_env = "PIPEWRIGHT_API_KEY"
/// ```
///
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Everything the service persists lives under this directory.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Root of the source snapshots pipelines extract from.
    #[serde(default = "default_fixtures_root")]
    pub fixtures_root: PathBuf,
    /// Where loads land; defaults to `<data_dir>/stores`.
    #[serde(default)]
    pub store_root: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("pipewright-data")
}

fn default_fixtures_root() -> PathBuf {
    PathBuf::from("fixtures")
}

fn default_workers() -> usize {
    4
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: default_data_dir(),
            fixtures_root: default_fixtures_root(),
            store_root: None,
            workers: default_workers(),
            engine: EngineConfig::default(),
            provider: ProviderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    /// Canned responses from a script fixture; `None` means no scripts.
    Scripted {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    Http(HttpProviderConfig),
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Scripted { script: None }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Arc<dyn Provider>, ServiceError> {
        Ok(match self {
            ProviderConfig::Scripted { script: None } => Arc::new(ScriptedProvider::new()),
            ProviderConfig::Scripted { script: Some(path) } => {
                Arc::new(ScriptedProvider::from_file(path).map_err(|e| ServiceError::Invalid(e.to_string()))?)
            }
            ProviderConfig::Http(config) => Arc::new(HttpProvider::new(config.clone())),
        })
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Invalid(format!("config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_relative_to(dir);
        }
        Ok(config)
    }

    pub fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.fixtures_root);
        if let Some(p) = self.store_root.as_mut() {
            fix(p);
        }
        if let ProviderConfig::Scripted { script: Some(p) } = &mut self.provider {
            fix(p);
        }
    }

    pub fn store_root(&self) -> PathBuf {
        self.store_root.clone().unwrap_or_else(|| self.data_dir.join("stores"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let config = ServiceConfig::from_toml(
            r#"
            data_dir = "d"
            [engine]
            question_budget = 2
            [provider]
            kind = "http"
            base_url = "http://localhost:8000/v1"
            model = "m"
            "#,
        )
        .unwrap();
        assert_eq!(config.engine.question_budget, 2);
        assert_eq!(config.engine.synthesis_threshold, 0.35);
        assert!(matches!(&config.provider, ProviderConfig::Http(h) if h.credential_env == "PIPEWRIGHT_API_KEY"));
        assert_eq!(config.store_root(), PathBuf::from("d/stores"));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(ServiceConfig::from_toml("datadir = \"x\"").is_err());
        assert_eq!(ServiceConfig::from_toml("").unwrap(), ServiceConfig::default());
    }
}
