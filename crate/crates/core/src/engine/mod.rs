//! The clarification loop: distill the transcript, reason about what is
//! still unknown, ask about it or act, then observe the result.
//!
//! Questions are only asked before the first action. Once the question
//! budget is spent, missing slots are defaulted and the state is flagged.

mod examples;
mod question;
mod trace;

use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use examples::{retrieve_examples, spec_query_text, ExampleStore, PipelineExample, ScoredExample};
pub use question::{question_target, template_question, vet_question, NothingToAsk, QuestionVerdict};
pub use trace::{Conversation, ReplayError, TraceEntry, TraceHeader, TraceLine};

use crate::catalog::{coverage, synthesize_tool, Catalog, ToolNeed, ToolRole, ToolSpec, DEFAULT_SYNTHESIS_THRESHOLD};
use crate::intent::{
    distill, sufficiency, update_slots, DestinationKind, DestinationRef, ParsedUtterance, Role, Slot, SlotName,
    TaskSpec, TransformStep, Transcript,
};
use crate::pipeline::{build, validate_compile, CompileReport, PipelineSpec, SelectedTools};
use crate::provider::{complete_with_retry, Message, Provider, ProviderError, ProviderRequest, RetryPolicy};
use crate::safety::{SafetyVerdict, Scanner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Distill,
    Reason,
    Question,
    Act,
    Observe,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }

    /// Whether `self -> to` is a transition of the loop. Any live phase may
    /// also fail on provider errors.
    pub fn can_move_to(self, to: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, to),
            (Distill, Reason)
                | (Reason, Question)
                | (Reason, Act)
                | (Question, Observe)
                | (Act, Observe)
                | (Observe, Distill)
                | (Observe, Done)
                | (Observe, Failed)
        ) || (!self.is_terminal() && to == Failed)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub question_budget: u32,
    /// Transcript size, in estimated tokens, above which old turns are folded.
    pub token_budget: usize,
    pub synthesis_threshold: f64,
    pub example_k: usize,
    pub provider_attempts: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            question_budget: 5,
            token_budget: 4000,
            synthesis_threshold: DEFAULT_SYNTHESIS_THRESHOLD,
            example_k: 2,
            provider_attempts: 3,
            retry_base_delay_ms: 500,
        }
    }
}

impl EngineConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.provider_attempts,
            base_delay: Duration::from_millis(self.retry_base_delay_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AskedQuestion {
    pub slot: SlotName,
    pub text: String,
    /// What the provider proposed, when it was replaced by a template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed: Option<String>,
}

/// What one action produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActOutcome {
    /// The built pipeline; stamped when the verdict allows execution. For a
    /// sanitized verdict this is the rewritten pipeline.
    pub pipeline: PipelineSpec,
    pub compile: CompileReport,
    pub verdict: SafetyVerdict,
    pub tools: Vec<String>,
    pub synthesized: Vec<ToolSpec>,
    pub examples: Vec<String>,
}

impl ActOutcome {
    pub fn succeeded(&self) -> bool {
        self.compile.pipeline_ok && self.verdict.status.is_executable()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub session_id: String,
    pub phase: Phase,
    pub question_count: u32,
    pub spec: TaskSpec,
    pub transcript: Transcript,
    #[serde(default)]
    pub last_observation: Option<String>,
    /// User text not yet parsed into the task spec.
    #[serde(default)]
    pub pending_utterance: Option<String>,
    #[serde(default)]
    pub questions: Vec<AskedQuestion>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub defaults_applied: bool,
    #[serde(default)]
    pub outcome: Option<ActOutcome>,
    #[serde(default)]
    pub failure: Option<String>,
}

impl LoopState {
    pub fn new(session_id: impl Into<String>, prompt: &str, at: DateTime<Utc>) -> Self {
        let mut transcript = Transcript::new();
        transcript.push(Role::User, prompt, at);
        Self {
            session_id: session_id.into(),
            phase: Phase::Distill,
            question_count: 0,
            spec: TaskSpec::default(),
            transcript,
            last_observation: None,
            pending_utterance: Some(prompt.to_string()),
            questions: Vec::new(),
            warnings: Vec::new(),
            defaults_applied: false,
            outcome: None,
            failure: None,
        }
    }

    /// The open question, while one is waiting for an answer.
    pub fn open_question(&self) -> Option<&AskedQuestion> {
        (self.phase == Phase::Question).then(|| self.questions.last()).flatten()
    }

    pub fn awaiting_input(&self) -> bool {
        self.phase == Phase::Question
    }

    fn fail(mut self, cause: String) -> Self {
        self.last_observation = Some(cause.clone());
        self.failure = Some(cause);
        self.phase = Phase::Failed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("session is finished ({0})")]
    Terminal(Phase),
    #[error("an answer to the open question is required")]
    AwaitingInput,
    #[error("user input is only accepted while a question is open, not in {0}")]
    UnexpectedInput(Phase),
    #[error("user input must not be empty")]
    EmptyInput,
}

const PARSE_PROMPT: &str = "You extract data-pipeline intent from user messages. Reply with one JSON object \
{\"assignments\": [...]} where each assignment is {\"slot\": ..., \"value\": ...}. Slots: \
\"sources\" (list of {\"kind\": local_dir|http_url|git_fixture|dataset_fixture, \"locator\"}), \
\"destination\" ({\"kind\": object_store_dir|table_store|local_dir, \"name\", \"locator\"}, any subset), \
\"transforms\" (list of {\"op\", \"params\"} or \"none\"), \"constraints\" (string map). \
Only include slots the message states.";

const QUESTION_PROMPT: &str = "You help a user specify a data pipeline. Ask exactly one short clarifying \
question about the first missing item. Reply with the question only.";

/// Drives one session's state. Steps are strictly sequential.
pub struct Engine<'a> {
    pub provider: &'a dyn Provider,
    /// Session view of the catalog; synthesized tools are added to it.
    pub catalog: &'a Catalog,
    pub examples: &'a ExampleStore,
    pub config: EngineConfig,
}

impl<'a> Engine<'a> {
    pub fn new(provider: &'a dyn Provider, catalog: &'a Catalog, examples: &'a ExampleStore, config: EngineConfig) -> Self {
        Self {
            provider,
            catalog,
            examples,
            config,
        }
    }

    /// Applies exactly one transition. `user_input` is required in the
    /// Question phase and refused elsewhere.
    pub fn step(&self, state: &LoopState, user_input: Option<&str>, at: DateTime<Utc>) -> Result<LoopState, EngineError> {
        if state.phase.is_terminal() {
            return Err(EngineError::Terminal(state.phase));
        }
        match (state.phase, user_input) {
            (Phase::Question, None) => return Err(EngineError::AwaitingInput),
            (Phase::Question, Some(text)) if text.trim().is_empty() => return Err(EngineError::EmptyInput),
            (Phase::Question, Some(_)) => {}
            (phase, Some(_)) => return Err(EngineError::UnexpectedInput(phase)),
            _ => {}
        }
        let mut next = state.clone();
        let next = match state.phase {
            Phase::Distill => {
                next.transcript = distill(&state.transcript, self.config.token_budget.max(1), &state.spec);
                next.phase = Phase::Reason;
                next
            }
            Phase::Reason => self.reason(next, at),
            Phase::Question => {
                next.pending_utterance = user_input.map(str::to_string);
                next.phase = Phase::Observe;
                next
            }
            Phase::Act => self.act(next, at),
            Phase::Observe => observe(next, at),
            Phase::Done | Phase::Failed => unreachable!("terminal phases return early"),
        };
        debug_assert!(state.phase.can_move_to(next.phase), "{} -> {}", state.phase, next.phase);
        Ok(next)
    }

    fn reason(&self, mut state: LoopState, at: DateTime<Utc>) -> LoopState {
        if let Some(text) = state.pending_utterance.take() {
            let parsed = match self.parse_utterance(&state, &text) {
                Ok(p) => p,
                Err(e) => return state.fail(format!("could not interpret the message: {e}")),
            };
            match update_slots(&state.spec, &parsed) {
                Ok(spec) => state.spec = spec,
                Err(e) => state.warnings.push(format!("ignored message: {e}")),
            }
        }

        let sufficiency = sufficiency(&state.spec);
        let missing = sufficiency.missing().to_vec();
        if missing.is_empty() {
            state.phase = Phase::Act;
            return state;
        }
        if state.question_count < self.config.question_budget {
            let proposed = match self.propose_question(&state, &missing) {
                Ok(q) => q,
                Err(e) => return state.fail(format!("could not formulate a question: {e}")),
            };
            let verdict = vet_question(&proposed, &state.spec).expect("slots are missing");
            let text = verdict.text().to_string();
            let slot = question_target(&text).expect("accepted and template questions have a target");
            state.transcript.push(Role::Assistant, text.clone(), at);
            state.questions.push(AskedQuestion {
                slot,
                text,
                proposed: (!verdict.is_accepted()).then_some(proposed),
            });
            state.question_count += 1;
            state.phase = Phase::Question;
            return state;
        }

        apply_defaults(&mut state);
        state.phase = Phase::Act;
        state
    }

    fn request_session(&self, state: &LoopState) -> String {
        state.session_id.clone()
    }

    fn context_text(state: &LoopState) -> String {
        let mut out = format!("Task so far: {}\n", state.spec.canonical_json());
        if let Some(summary) = state.transcript.distilled_summary() {
            out.push_str(&format!("Earlier conversation: {summary}\n"));
        }
        out.push_str("Conversation:\n");
        for turn in state.transcript.turns() {
            let role = match turn.role {
                Role::User => "user",
                Role::Assistant => "assistant",
                Role::System => "system",
            };
            out.push_str(&format!("{role}: {}\n", turn.text));
        }
        out
    }

    /// Asks for structured slot assignments; a reply of the wrong shape is
    /// re-requested like any other provider failure.
    fn parse_utterance(&self, state: &LoopState, text: &str) -> Result<ParsedUtterance, ProviderError> {
        let request = ProviderRequest::json(
            self.request_session(state),
            vec![
                Message::system(PARSE_PROMPT),
                Message::user(format!("{}\nInterpret this message: {text}", Self::context_text(state))),
            ],
        );
        let attempts = self.config.provider_attempts.max(1);
        let mut last = ProviderError::Malformed("no attempt made".into());
        for _ in 0..attempts {
            let response = complete_with_retry(self.provider, &request, self.config.retry())?;
            match serde_json::from_str::<ParsedUtterance>(&response.text) {
                Ok(parsed) => return Ok(parsed),
                Err(e) => last = ProviderError::Malformed(format!("assignments: {e}")),
            }
        }
        Err(last)
    }

    fn propose_question(&self, state: &LoopState, missing: &[SlotName]) -> Result<String, ProviderError> {
        let names: Vec<&str> = missing.iter().map(|s| s.as_str()).collect();
        let request = ProviderRequest::text(
            self.request_session(state),
            vec![
                Message::system(QUESTION_PROMPT),
                Message::user(format!("{}Missing: {}", Self::context_text(state), names.join(", "))),
            ],
        );
        Ok(complete_with_retry(self.provider, &request, self.config.retry())?.text)
    }

    fn act(&self, mut state: LoopState, at: DateTime<Utc>) -> LoopState {
        match self.build_pipeline(&mut state, at) {
            Ok(outcome) => {
                state.last_observation = Some(describe(&outcome));
                if !outcome.succeeded() {
                    state.failure = Some(describe(&outcome));
                }
                state.outcome = Some(outcome);
            }
            Err(cause) => {
                state.last_observation = Some(cause.clone());
                state.failure = Some(cause);
            }
        }
        state.phase = Phase::Observe;
        state
    }

    /// The act step on its own, for a spec that is already sufficient. Only
    /// tool synthesis can reach the provider.
    pub fn compile_spec(&self, session_id: &str, spec: &TaskSpec, at: DateTime<Utc>) -> Result<ActOutcome, String> {
        let check = sufficiency(spec);
        if !check.is_sufficient() {
            let names: Vec<&str> = check.missing().iter().map(|s| s.as_str()).collect();
            return Err(format!("task spec is missing {}", names.join(", ")));
        }
        let mut state = LoopState::new(session_id, "", at);
        state.spec = spec.clone();
        self.build_pipeline(&mut state, at)
    }

    fn build_pipeline(&self, state: &mut LoopState, at: DateTime<Utc>) -> Result<ActOutcome, String> {
        let spec = state.spec.clone();
        let examples = retrieve_examples(&spec, self.examples, self.config.example_k.max(1));
        if examples.is_empty() {
            state.warnings.push("no example pipelines available; generating without examples".into());
        }
        let sources = spec.sources.value().ok_or("no data source was given")?;
        let destination = spec.destination.value().ok_or("no destination was given")?;
        let everything = self.catalog.len();

        let mut extractors = Vec::new();
        for source in sources {
            let query = format!("extract {} {}", source.kind.as_str().replace('_', " "), source.locator);
            let tool = self
                .catalog
                .select(&query, ToolRole::Extractor, source.kind.as_str(), everything)
                .ok_or_else(|| format!("no extractor reads {}", source.kind.as_str()))?;
            extractors.push(tool.tool);
        }

        let mut transforms = Vec::new();
        let mut synthesized = Vec::new();
        for step in spec.transform_steps() {
            let need = transform_need(step);
            if coverage(self.catalog, &need) >= self.config.synthesis_threshold {
                let tool = self
                    .catalog
                    .select(&need.query, ToolRole::Transform, &need.handle, everything)
                    .expect("covered needs have a serving tool");
                transforms.push(tool.tool);
            } else {
                let tool = synthesize_tool(
                    &need,
                    self.catalog,
                    self.provider,
                    &state.session_id,
                    self.config.synthesis_threshold,
                    self.config.retry(),
                )
                .map_err(|e| format!("no tool for transform `{}`: {e}", step.op))?;
                synthesized.push(tool.clone());
                transforms.push(tool);
            }
        }

        let dest_kind = destination.kind.as_str();
        let loader = self
            .catalog
            .select(&format!("load into {}", dest_kind.replace('_', " ")), ToolRole::Loader, dest_kind, everything)
            .ok_or_else(|| format!("no loader writes {dest_kind}"))?
            .tool;
        let validator = self
            .catalog
            .select("validate row count extracted loaded", ToolRole::Validator, "row_count_compare", everything)
            .ok_or("no row-count validator in the catalog")?
            .tool;

        let tools = SelectedTools {
            extractors,
            transforms,
            loader,
            validator,
        };
        let pipeline = build(&spec, &tools, &state.session_id, at).map_err(|e| e.to_string())?;
        let compile = validate_compile(&pipeline, self.catalog);
        let verdict = Scanner::default().scan(&pipeline, self.catalog);
        let mut chosen = verdict.approved(&pipeline).cloned().unwrap_or_else(|| pipeline.clone());
        if verdict.status.is_executable() && compile.pipeline_ok {
            chosen.stamp(verdict.status);
        }
        let mut tool_ids: Vec<String> = chosen.components.values().map(|c| c.tool_ref.clone()).collect();
        tool_ids.sort();
        Ok(ActOutcome {
            pipeline: chosen,
            compile,
            verdict,
            tools: tool_ids,
            synthesized,
            examples: examples.into_iter().map(|e| e.example.id).collect(),
        })
    }
}

/// Retrieval need for one transform step.
pub fn transform_need(step: &TransformStep) -> ToolNeed {
    ToolNeed {
        role: ToolRole::Transform,
        handle: step.op.clone(),
        query: format!("transform {}", step.op),
        params: step.params.clone(),
        writes: false,
    }
}

/// Destination used when the user never named one.
pub fn default_destination(session_id: &str) -> DestinationRef {
    DestinationRef {
        kind: DestinationKind::LocalDir,
        locator: format!("sessions/{session_id}"),
        name: "output".into(),
    }
}

fn apply_defaults(state: &mut LoopState) {
    let mut applied = Vec::new();
    if !matches!(state.spec.destination, Slot::Filled(_)) {
        let dest = default_destination(&state.session_id);
        applied.push(format!("destination defaulted to local_dir `{}`", dest.write_path()));
        state.spec.destination = Slot::Filled(dest);
    }
    if state.spec.transforms.is_unfilled() {
        applied.push("transforms defaulted to none".into());
        state.spec.transforms = Slot::ExplicitNone;
    }
    if !applied.is_empty() {
        state.defaults_applied = true;
        state
            .warnings
            .push(format!("question budget exhausted: {}", applied.join("; ")));
    }
}

fn describe(outcome: &ActOutcome) -> String {
    let errors = outcome.compile.errors().count();
    let compile = if errors == 0 { "compiles".to_string() } else { format!("{errors} compile error(s)") };
    format!(
        "pipeline `{}` ({}): {} tasks, {compile}, safety {:?} with {} finding(s)",
        outcome.pipeline.name,
        outcome.pipeline.artifact_id(),
        outcome.pipeline.tasks.len(),
        outcome.verdict.status,
        outcome.verdict.findings.len()
    )
}

fn observe(mut state: LoopState, at: DateTime<Utc>) -> LoopState {
    if let Some(answer) = state.pending_utterance.clone() {
        state.transcript.push(Role::User, answer, at);
        state.phase = Phase::Distill;
        return state;
    }
    if let Some(observation) = state.last_observation.clone() {
        state.transcript.push(Role::System, observation, at);
    }
    state.phase = match &state.outcome {
        Some(outcome) if outcome.succeeded() => Phase::Done,
        _ => Phase::Failed,
    };
    state
}
