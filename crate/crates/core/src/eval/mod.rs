//! Generation-quality metrics: compile rates, variance across repeated
//! generations, and the ELT desk suite.

pub mod elt;
pub mod metrics;
pub mod similarity;
pub mod table;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use elt::{run_elt_suite, EltManifest, EltReport, EltTaskResult, SuiteMode, SuiteOptions};
pub use metrics::{compile_stats, duplication_gini, variance_report, CompileStats, VarianceReport};
pub use similarity::similarity;

use crate::catalog::Catalog;
use crate::engine::{Conversation, EngineConfig, ExampleStore, Phase};
use crate::provider::Provider;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

/// N sessions on the same prompt and what they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRun {
    pub prompt: String,
    pub report: VarianceReport,
    /// Artifact ids of the generated pipelines, in session order.
    pub pipelines: Vec<String>,
    /// Sessions that produced no pipeline, with the reason.
    pub failures: Vec<(String, String)>,
}

/// Runs `n` independent sessions (`variance-01`, `variance-02`, ...) on one
/// prompt and compares the pipelines they build. `answers` are given, in
/// order, to any clarifying questions.
#[allow(clippy::too_many_arguments)]
pub fn run_variance(
    prompt: &str,
    n: usize,
    answers: &[String],
    provider: &dyn Provider,
    catalog: &Catalog,
    examples: &ExampleStore,
    config: &EngineConfig,
    at: DateTime<Utc>,
) -> Result<VarianceRun, EvalError> {
    let mut bodies = Vec::new();
    let mut pipelines = Vec::new();
    let mut failures = Vec::new();
    for i in 1..=n {
        let session = format!("variance-{i:02}");
        let mut conv = Conversation::new(&session, prompt, at, config.clone(), catalog);
        let mut remaining = answers.iter();
        let mut result = conv.advance(provider, examples, at);
        while result.is_ok() && conv.state.awaiting_input() {
            match remaining.next() {
                Some(a) => result = conv.answer(provider, examples, a, at),
                None => break,
            }
        }
        match (result, &conv.state.outcome) {
            (Err(e), _) => failures.push((session, e.to_string())),
            (Ok(()), Some(outcome)) if conv.state.phase == Phase::Done => {
                bodies.push(outcome.pipeline.body_text());
                pipelines.push(outcome.pipeline.artifact_id());
            }
            (Ok(()), _) => {
                let reason = conv.state.failure.clone().unwrap_or_else(|| "session did not finish".into());
                failures.push((session, reason));
            }
        }
    }
    let report = variance_report(&bodies)?;
    Ok(VarianceRun {
        prompt: prompt.to_string(),
        report,
        pipelines,
        failures,
    })
}
