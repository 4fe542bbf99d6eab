//! The service handle. Session state and artifacts are persisted as plain
//! files under the data directory:
//!
//! ```text
//! sessions/<id>/trace.jsonl
//! pipelines/<artifact id>.yaml
//! runs/<artifact id>.json
//! eval/<mode>/<task>/...
//! ```

pub mod config;
pub mod http;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ProviderConfig, ServiceConfig};

use crate::catalog::{Catalog, Implementation};
use crate::engine::{Conversation, EngineError, ExampleStore, LoopState, Phase};
use crate::eval::{run_elt_suite, run_variance, EltReport, EvalError, SuiteMode, SuiteOptions, VarianceRun};
use crate::exec::{execute, Backends, ExecOptions, Measure, RunRecord, Summary, SummarySpec};
use crate::intent::{sufficiency, SlotName, TaskSpec, Transcript};
use crate::pipeline::{parse, serialize, Binding, PipelineSpec};
use crate::provider::Provider;
use crate::safety::{SafetyVerdict, Scanner, VerdictStatus};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{message}")]
    Conflict {
        message: String,
        verdict: Option<Box<SafetyVerdict>>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    fn conflict(message: impl Into<String>) -> Self {
        ServiceError::Conflict {
            message: message.into(),
            verdict: None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict { .. } => "conflict",
            ServiceError::Invalid(_) => "invalid",
            ServiceError::Internal(_) => "internal",
        }
    }

    /// Machine-readable form used on the wire and by the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        let mut body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let ServiceError::Conflict { verdict: Some(v), .. } = self {
            body["verdict"] = serde_json::to_value(v).expect("verdict serializes");
        }
        body
    }
}

impl From<EvalError> for ServiceError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Usage(m) | EvalError::Config(m) => ServiceError::Invalid(m),
            EvalError::Io(m) => ServiceError::Internal(m),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Internal(format!("{}: {e}", path.display()))
}

/// What the assistant says after a turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReply {
    pub session_id: String,
    pub phase: Phase,
    /// The open question, or the closing observation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Artifact id of the generated pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictStatus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotState {
    Filled,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub phase: Phase,
    pub transcript: Transcript,
    pub spec: TaskSpec,
    pub slots: BTreeMap<SlotName, SlotState>,
    pub state: LoopState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<String>,
}

type Shared = Arc<Mutex<Conversation>>;

pub struct Service {
    config: ServiceConfig,
    provider: Arc<dyn Provider>,
    catalog: Catalog,
    examples: ExampleStore,
    scanner: Scanner,
    sessions: RwLock<BTreeMap<String, Shared>>,
}

impl Service {
    /// Opens the data directory and replays every persisted session.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let provider = config.provider.build()?;
        Self::with_provider(config, provider)
    }

    pub fn with_provider(config: ServiceConfig, provider: Arc<dyn Provider>) -> Result<Self, ServiceError> {
        for sub in ["sessions", "pipelines", "runs"] {
            let dir = config.data_dir.join(sub);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        let service = Self {
            config,
            provider,
            catalog: Catalog::curated(),
            examples: ExampleStore::bundled(),
            scanner: Scanner::default(),
            sessions: RwLock::new(BTreeMap::new()),
        };
        service.recover()?;
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn recover(&self) -> Result<(), ServiceError> {
        let dir = self.config.data_dir.join("sessions");
        let mut sessions = self.sessions.write().unwrap();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let path = entry.map_err(|e| io_err(&dir, e))?.path().join("trace.jsonl");
            let Ok(text) = fs::read_to_string(&path) else {
                continue;
            };
            match Conversation::replay(&text, &self.catalog, &self.examples) {
                Ok(conv) => {
                    sessions.insert(conv.header.session_id.clone(), Arc::new(Mutex::new(conv)));
                }
                Err(e) => tracing::warn!(trace = %path.display(), error = %e, "skipping unreplayable session"),
            }
        }
        tracing::info!(count = sessions.len(), "sessions recovered");
        Ok(())
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap().keys().cloned().collect()
    }

    fn session(&self, id: &str) -> Result<Shared, ServiceError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session `{id}`")))
    }

    fn persist(&self, conv: &Conversation) -> Result<(), ServiceError> {
        let dir = self.config.data_dir.join("sessions").join(&conv.header.session_id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let tmp = dir.join("trace.jsonl.tmp");
        fs::write(&tmp, conv.to_jsonl()).map_err(|e| io_err(&tmp, e))?;
        let path = dir.join("trace.jsonl");
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        if let Some(outcome) = &conv.state.outcome {
            let path = self.pipeline_path(&outcome.pipeline.artifact_id());
            if !path.exists() {
                fs::write(&path, serialize(&outcome.pipeline)).map_err(|e| io_err(&path, e))?;
            }
        }
        Ok(())
    }

    fn reply(conv: &Conversation) -> SessionReply {
        let state = &conv.state;
        let message = match state.open_question() {
            Some(q) => Some(q.text.clone()),
            None => state.last_observation.clone(),
        };
        SessionReply {
            session_id: state.session_id.clone(),
            phase: state.phase,
            message,
            pipeline: state.outcome.as_ref().map(|o| o.pipeline.artifact_id()),
            verdict: state.outcome.as_ref().map(|o| o.verdict.status),
        }
    }

    /// Starts a session and runs it up to its first question or its end.
    pub fn create_session(&self, prompt: &str) -> Result<SessionReply, ServiceError> {
        if prompt.trim().is_empty() {
            return Err(ServiceError::Invalid("prompt is empty".into()));
        }
        let id = uuid::Uuid::new_v4().to_string();
        let mut conv = Conversation::new(&id, prompt, Utc::now(), self.config.engine.clone(), &self.catalog);
        let result = conv.advance(self.provider.as_ref(), &self.examples, Utc::now());
        self.persist(&conv)?;
        let reply = Self::reply(&conv);
        self.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(conv)));
        result.map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(reply)
    }

    /// Answers the open question. A second message while one is still being
    /// processed is a conflict, as is any message to a finished session.
    pub fn post_message(&self, id: &str, text: &str) -> Result<SessionReply, ServiceError> {
        let shared = self.session(id)?;
        let mut conv = match shared.try_lock() {
            Ok(guard) => guard,
            Err(TryLockError::WouldBlock) => {
                return Err(ServiceError::conflict(format!("session `{id}` is busy with another message")))
            }
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        if conv.state.phase.is_terminal() {
            return Err(ServiceError::conflict(format!("session `{id}` is {}", conv.state.phase)));
        }
        if text.trim().is_empty() {
            return Err(ServiceError::Invalid("message text is empty".into()));
        }
        let result = conv.answer(self.provider.as_ref(), &self.examples, text, Utc::now());
        self.persist(&conv)?;
        match result {
            Ok(()) => Ok(Self::reply(&conv)),
            Err(EngineError::Terminal(_) | EngineError::AwaitingInput | EngineError::UnexpectedInput(_)) => {
                Err(ServiceError::conflict(format!("session `{id}` is not waiting for input")))
            }
            Err(EngineError::EmptyInput) => Err(ServiceError::Invalid("message text is empty".into())),
        }
    }

    pub fn get_session(&self, id: &str) -> Result<SessionView, ServiceError> {
        let shared = self.session(id)?;
        let conv = shared.lock().unwrap_or_else(|p| p.into_inner());
        let state = conv.state.clone();
        let check = sufficiency(&state.spec);
        let slots = SlotName::REQUIRED
            .iter()
            .map(|s| {
                let st = if check.missing().contains(s) { SlotState::Missing } else { SlotState::Filled };
                (*s, st)
            })
            .collect();
        Ok(SessionView {
            session_id: state.session_id.clone(),
            created_at: conv.header.created_at,
            phase: state.phase,
            transcript: state.transcript.clone(),
            spec: state.spec.clone(),
            slots,
            pipeline: state.outcome.as_ref().map(|o| o.pipeline.artifact_id()),
            state,
        })
    }

    fn pipeline_path(&self, pid: &str) -> PathBuf {
        self.config.data_dir.join("pipelines").join(format!("{pid}.yaml"))
    }

    fn check_pid(pid: &str) -> Result<(), ServiceError> {
        if pid.is_empty() || !pid.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(ServiceError::NotFound(format!("pipeline `{pid}`")));
        }
        Ok(())
    }

    /// Canonical YAML of a stored pipeline.
    pub fn pipeline_yaml(&self, pid: &str) -> Result<String, ServiceError> {
        Self::check_pid(pid)?;
        let path = self.pipeline_path(pid);
        fs::read_to_string(&path).map_err(|_| ServiceError::NotFound(format!("pipeline `{pid}`")))
    }

    pub fn pipeline(&self, pid: &str) -> Result<PipelineSpec, ServiceError> {
        parse(&self.pipeline_yaml(pid)?).map_err(|e| ServiceError::Internal(format!("pipeline `{pid}`: {e}")))
    }

    /// Catalog a pipeline was built against: the owning session's view when
    /// it was generated here, so synthesized tools resolve.
    fn catalog_for(&self, pid: &str) -> Catalog {
        let sessions: Vec<Shared> = self.sessions.read().unwrap().values().cloned().collect();
        for shared in sessions {
            let conv = shared.lock().unwrap_or_else(|p| p.into_inner());
            if conv.state.outcome.as_ref().is_some_and(|o| o.pipeline.artifact_id() == pid) {
                return conv.catalog.session_view();
            }
        }
        self.catalog.session_view()
    }

    pub fn validate(&self, pid: &str) -> Result<SafetyVerdict, ServiceError> {
        let pipeline = self.pipeline(pid)?;
        Ok(self.scanner.scan(&pipeline, &self.catalog_for(pid)))
    }

    fn backends(&self) -> Backends {
        Backends::new(self.config.fixtures_root.clone(), self.config.store_root())
    }

    /// Scans, then runs whatever the verdict approves. Rejected pipelines
    /// are a conflict carrying the verdict.
    pub fn run(&self, pid: &str) -> Result<RunRecord, ServiceError> {
        let pipeline = self.pipeline(pid)?;
        let verdict = self.scanner.scan(&pipeline, &self.catalog_for(pid));
        let Some(approved) = verdict.approved(&pipeline) else {
            return Err(ServiceError::Conflict {
                message: format!("pipeline `{pid}` was rejected by the safety validator"),
                verdict: Some(Box::new(verdict)),
            });
        };
        let mut approved = approved.clone();
        approved.stamp(verdict.status);
        let options = ExecOptions::new(self.backends()).with_workers(self.config.workers);
        let record = execute(&approved, verdict.status, &options).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let path = self.config.data_dir.join("runs").join(format!("{pid}.json"));
        let json = serde_json::to_string_pretty(&record).expect("run record serializes");
        fs::write(&path, json).map_err(|e| io_err(&path, e))?;
        Ok(record)
    }

    /// Aggregates what the pipeline's first load wrote. Without measures the
    /// rows are counted; without a grouping the first column is used.
    pub fn summary(&self, pid: &str, group_by: Option<Vec<String>>, measures: Vec<Measure>) -> Result<Summary, ServiceError> {
        let pipeline = self.pipeline(pid)?;
        if !self.config.data_dir.join("runs").join(format!("{pid}.json")).is_file() {
            return Err(ServiceError::conflict(format!("pipeline `{pid}` has not been run")));
        }
        let (kind, target) = first_load(&pipeline)
            .ok_or_else(|| ServiceError::Invalid(format!("pipeline `{pid}` loads nothing")))?;
        let data = self
            .backends()
            .read_destination(&kind, &target)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let group_by = group_by.unwrap_or_else(|| data.schema().iter().take(1).map(|c| c.name.clone()).collect());
        let measures = if measures.is_empty() { vec![Measure::count()] } else { measures };
        crate::exec::emit_summary(&data, &SummarySpec { group_by, measures })
            .map_err(|e| ServiceError::Invalid(e.to_string()))
    }

    pub fn eval_variance(&self, prompt: &str, n: usize, answers: &[String]) -> Result<VarianceRun, ServiceError> {
        if !(2..=200).contains(&n) {
            return Err(ServiceError::Invalid(format!("n must be between 2 and 200, got {n}")));
        }
        Ok(run_variance(
            prompt,
            n,
            answers,
            self.provider.as_ref(),
            &self.catalog,
            &self.examples,
            &self.config.engine,
            Utc::now(),
        )?)
    }

    pub fn eval_elt(&self, suite: &Path, mode: SuiteMode) -> Result<EltReport, ServiceError> {
        let options = SuiteOptions {
            catalog: &self.catalog,
            examples: &self.examples,
            output_root: self.config.data_dir.join("eval"),
            workers: self.config.workers,
        };
        Ok(run_elt_suite(suite, mode, &options)?)
    }
}

/// Destination kind and write target of the first `load.*` task.
fn first_load(pipeline: &PipelineSpec) -> Option<(String, String)> {
    pipeline.tasks.values().find_map(|task| {
        let component = pipeline.components.get(&task.component)?;
        let Implementation::Builtin(b) = &component.implementation else {
            return None;
        };
        let kind = b.strip_prefix("load.")?;
        let target = match task.inputs.get("target")? {
            Binding::Literal(t) => t.clone(),
            Binding::Param(p) => pipeline.parameters.get(p)?.clone(),
            Binding::Upstream(_) => return None,
        };
        Some((kind.to_string(), target))
    })
}
