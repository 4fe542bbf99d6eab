use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Provider, ProviderError, ProviderRequest, ProviderResponse};

/// One recorded call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub request_hash: String,
    pub response: ProviderResponse,
}

/// Serves recorded responses matched by [`ProviderRequest::content_hash`].
#[derive(Debug, Default)]
pub struct ReplayProvider {
    recorded: HashMap<String, ProviderResponse>,
}

impl ReplayProvider {
    pub fn new(exchanges: impl IntoIterator<Item = Exchange>) -> Self {
        let mut recorded = HashMap::new();
        for ex in exchanges {
            recorded.entry(ex.request_hash).or_insert(ex.response);
        }
        Self { recorded }
    }

    /// Reads a JSONL file of [`Exchange`] records.
    pub fn from_jsonl(path: &Path) -> Result<Self, ProviderError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let mut exchanges = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Exchange = serde_json::from_str(&line)
                .map_err(|e| ProviderError::InvalidRequest(format!("line {}: {e}", i + 1)))?;
            exchanges.push(ex);
        }
        Ok(Self::new(exchanges))
    }

    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let hash = request.content_hash();
        self.recorded
            .get(&hash)
            .cloned()
            .ok_or_else(|| ProviderError::Unavailable(format!("no recording for request {hash}")))
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// Wraps a provider and keeps every successful exchange.
pub struct RecordingProvider<P> {
    inner: P,
    exchanges: Mutex<Vec<Exchange>>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            exchanges: Mutex::new(Vec::new()),
        }
    }

    pub fn take(&self) -> Vec<Exchange> {
        std::mem::take(&mut *self.exchanges.lock().unwrap())
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        for ex in self.exchanges.lock().unwrap().iter() {
            writeln!(file, "{}", serde_json::to_string(ex)?)?;
        }
        Ok(())
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let resp = self.inner.complete(request)?;
        self.exchanges.lock().unwrap().push(Exchange {
            request_hash: request.content_hash(),
            response: resp.clone(),
        });
        Ok(resp)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{Message, ScriptedProvider};

    #[test]
    fn replays_identical_requests() {
        let rec = RecordingProvider::new(ScriptedProvider::new().with_script("s", ["first", "second"]));
        let a = ProviderRequest::text("s", vec![Message::user("a")]);
        let b = ProviderRequest::text("s", vec![Message::user("b")]);
        rec.complete(&a).unwrap();
        rec.complete(&b).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        rec.write_jsonl(&path).unwrap();
        let replay = ReplayProvider::from_jsonl(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete(&a).unwrap().text, "first");
        assert_eq!(replay.complete(&a).unwrap().text, "first");
        assert_eq!(replay.complete(&b).unwrap().text, "second");
        let c = ProviderRequest::text("s", vec![Message::user("c")]);
        assert!(matches!(replay.complete(&c), Err(ProviderError::Unavailable(_))));
    }
}
