//! JSONL loop traces: a header line, then one line per transition with the
//! provider exchanges made during it. Replaying a trace re-runs every step
//! against its recorded responses and checks the resulting state digests.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Engine, EngineConfig, EngineError, ExampleStore, LoopState, Phase};
use crate::catalog::Catalog;
use crate::provider::{Exchange, Provider, RecordingProvider, ReplayProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub session_id: String,
    pub prompt: String,
    pub created_at: DateTime<Utc>,
    pub config: EngineConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub from: Phase,
    pub to: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_input: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<Exchange>,
    pub state_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Step(TraceEntry),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace does not start with a header")]
    MissingHeader,
    #[error("step {seq} diverged: {detail}")]
    Diverged { seq: u64, detail: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// SHA-256 of the state's JSON form.
pub fn state_digest(state: &LoopState) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(state).expect("state serializes")))
}

/// A session's loop state together with its trace and catalog overlay.
#[derive(Debug)]
pub struct Conversation {
    pub header: TraceHeader,
    pub state: LoopState,
    pub entries: Vec<TraceEntry>,
    /// Session view: curated tools plus anything synthesized here.
    pub catalog: Catalog,
}

impl Conversation {
    pub fn new(session_id: &str, prompt: &str, created_at: DateTime<Utc>, config: EngineConfig, base: &Catalog) -> Self {
        Self {
            header: TraceHeader {
                session_id: session_id.to_string(),
                prompt: prompt.to_string(),
                created_at,
                config,
            },
            state: LoopState::new(session_id, prompt, created_at),
            entries: Vec::new(),
            catalog: base.session_view(),
        }
    }

    /// One transition, recorded.
    pub fn step(
        &mut self,
        provider: &dyn Provider,
        examples: &ExampleStore,
        user_input: Option<&str>,
        at: DateTime<Utc>,
    ) -> Result<&TraceEntry, EngineError> {
        let recorder = RecordingProvider::new(provider);
        let engine = Engine::new(&recorder, &self.catalog, examples, self.header.config.clone());
        let next = engine.step(&self.state, user_input, at)?;
        let entry = TraceEntry {
            seq: self.entries.len() as u64 + 1,
            at,
            from: self.state.phase,
            to: next.phase,
            user_input: user_input.map(str::to_string),
            exchanges: recorder.take(),
            state_digest: state_digest(&next),
        };
        tracing::debug!(session = %self.header.session_id, from = %entry.from, to = %entry.to, "step");
        self.state = next;
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Steps without input until a question is open or the session ends.
    pub fn advance(&mut self, provider: &dyn Provider, examples: &ExampleStore, at: DateTime<Utc>) -> Result<(), EngineError> {
        while !self.state.phase.is_terminal() && !self.state.awaiting_input() {
            self.step(provider, examples, None, at)?;
        }
        Ok(())
    }

    /// Answers the open question and advances.
    pub fn answer(
        &mut self,
        provider: &dyn Provider,
        examples: &ExampleStore,
        text: &str,
        at: DateTime<Utc>,
    ) -> Result<(), EngineError> {
        self.step(provider, examples, Some(text), at)?;
        self.advance(provider, examples, at)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&TraceLine::Header(self.header.clone())).expect("header serializes");
        out.push('\n');
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(&TraceLine::Step(entry.clone())).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a conversation by re-running every recorded step.
    pub fn replay(text: &str, base: &Catalog, examples: &ExampleStore) -> Result<Self, ReplayError> {
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(line).map_err(|e| ReplayError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            lines.push(parsed);
        }
        let mut lines = lines.into_iter();
        let Some(TraceLine::Header(header)) = lines.next() else {
            return Err(ReplayError::MissingHeader);
        };
        let mut conv = Conversation::new(&header.session_id, &header.prompt, header.created_at, header.config.clone(), base);
        for line in lines {
            let TraceLine::Step(recorded) = line else {
                return Err(ReplayError::Parse {
                    line: conv.entries.len() + 2,
                    message: "unexpected second header".into(),
                });
            };
            let provider = ReplayProvider::new(recorded.exchanges.clone());
            let replayed = conv.step(&provider, examples, recorded.user_input.as_deref(), recorded.at)?.clone();
            if replayed.to != recorded.to || replayed.state_digest != recorded.state_digest {
                return Err(ReplayError::Diverged {
                    seq: recorded.seq,
                    detail: format!("recorded {} -> {}, replayed {} -> {}", recorded.from, recorded.to, replayed.from, replayed.to),
                });
            }
        }
        Ok(conv)
    }
}
