use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{Provider, ProviderError, ProviderRequest, ProviderResponse};

/// Session id whose script is used when a session has none of its own.
pub const DEFAULT_SESSION: &str = "default";

/// Returns canned responses in order, keyed by (session, call index).
///
/// Fixture format (YAML or JSON):
///
/// ```yaml
/// sessions:
///   demo:
///     - '{"assignments": []}'
///     - Where should the data be stored?
/// ```
///
/// String entries are returned verbatim; structured entries are serialized
/// to JSON text.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    scripts: HashMap<String, Vec<String>>,
    cursors: Mutex<HashMap<String, usize>>,
}

#[derive(Deserialize)]
struct Fixture {
    sessions: HashMap<String, Vec<serde_yaml::Value>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_script<I, S>(mut self, session: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.add_script(session, responses);
        self
    }

    pub fn add_script<I, S>(&mut self, session: &str, responses: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.scripts
            .insert(session.to_string(), responses.into_iter().map(Into::into).collect());
    }

    pub fn from_yaml(text: &str) -> Result<Self, ProviderError> {
        let fixture: Fixture =
            serde_yaml::from_str(text).map_err(|e| ProviderError::InvalidRequest(format!("script fixture: {e}")))?;
        let mut provider = Self::new();
        for (session, entries) in fixture.sessions {
            let texts = entries
                .into_iter()
                .map(entry_text)
                .collect::<Result<Vec<_>, _>>()?;
            provider.add_script(&session, texts);
        }
        Ok(provider)
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    /// Number of calls served so far for `session`.
    pub fn calls(&self, session: &str) -> usize {
        self.cursors.lock().unwrap().get(session).copied().unwrap_or(0)
    }
}

pub(crate) fn entry_text(value: serde_yaml::Value) -> Result<String, ProviderError> {
    match value {
        serde_yaml::Value::String(s) => Ok(s),
        other => {
            let json: serde_json::Value = serde_yaml::from_value(other)
                .map_err(|e| ProviderError::InvalidRequest(format!("script entry: {e}")))?;
            Ok(json.to_string())
        }
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let script = self
            .scripts
            .get(&request.session)
            .or_else(|| self.scripts.get(DEFAULT_SESSION))
            .ok_or_else(|| ProviderError::Unavailable(format!("no script for session `{}`", request.session)))?;
        let mut cursors = self.cursors.lock().unwrap();
        let cursor = cursors.entry(request.session.clone()).or_insert(0);
        let text = script.get(*cursor).ok_or_else(|| {
            ProviderError::Unavailable(format!(
                "script for session `{}` exhausted after {} responses",
                request.session,
                script.len()
            ))
        })?;
        *cursor += 1;
        Ok(ProviderResponse::new(text.clone()))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
