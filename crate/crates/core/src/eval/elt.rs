//! The desk ELT suite: each task is a full scripted session followed by a
//! local run, checked against the expected destination state.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::catalog::Catalog;
use crate::engine::{Conversation, EngineConfig, ExampleStore, Phase};
use crate::exec::{execute, Backends, Column, ExecOptions};
use crate::intent::DestinationKind;
use crate::pipeline::serialize;
use crate::provider::{entry_text, ScriptedProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteMode {
    Full,
    /// Question budget of zero: the loop acts on whatever the prompt says.
    NoQuestion,
}

impl SuiteMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SuiteMode::Full => "full",
            SuiteMode::NoQuestion => "no_question",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedDestination {
    pub kind: DestinationKind,
    /// Store-relative write path.
    pub locator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    pub destination: ExpectedDestination,
    pub row_count: u64,
    pub schema: Vec<Column>,
}

/// `manifest.yaml` of one suite task. Paths are relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EltManifest {
    pub id: String,
    pub prompt: String,
    #[serde(default = "default_fixtures")]
    pub fixtures: PathBuf,
    /// Simulated user replies, one per clarifying question.
    #[serde(default)]
    pub answers: Vec<String>,
    /// Scripted provider replies for a full session.
    pub responses: Vec<serde_yaml::Value>,
    /// Replies when no questions are asked; defaults to `responses`.
    #[serde(default)]
    pub no_question_responses: Option<Vec<serde_yaml::Value>>,
    pub expected: Expected,
    #[serde(default)]
    pub transform_golden: Option<PathBuf>,
}

impl EltManifest {
    /// Scripted provider serving this task's replies for `mode`, keyed by
    /// the task id (which is also the session id).
    pub fn provider(&self, mode: SuiteMode) -> Result<ScriptedProvider, EvalError> {
        let responses = match (mode, &self.no_question_responses) {
            (SuiteMode::NoQuestion, Some(r)) => r,
            _ => &self.responses,
        };
        let texts = responses
            .iter()
            .cloned()
            .map(entry_text)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        Ok(ScriptedProvider::new().with_script(&self.id, texts))
    }

    pub fn engine_config(&self, mode: SuiteMode) -> EngineConfig {
        EngineConfig {
            question_budget: if mode == SuiteMode::NoQuestion { 0 } else { EngineConfig::default().question_budget },
            retry_base_delay_ms: 0,
            ..EngineConfig::default()
        }
    }
}

fn default_fixtures() -> PathBuf {
    PathBuf::from("fixtures")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EltTaskResult {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    pub questions: u32,
    pub defaults_applied: bool,
    pub extraction_loading_ok: bool,
    /// `None` when the task has no transform golden.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EltReport {
    pub mode: SuiteMode,
    pub tasks: Vec<EltTaskResult>,
    /// Percent of tasks whose destination matched.
    pub srdel: f64,
    /// Percent of tasks with a golden whose output matched it.
    pub srdt: f64,
}

impl EltReport {
    fn from_tasks(mode: SuiteMode, tasks: Vec<EltTaskResult>) -> Self {
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let el = tasks.iter().filter(|t| t.extraction_loading_ok).count();
        let with_golden = tasks.iter().filter(|t| t.transform_ok.is_some()).count();
        let t_ok = tasks.iter().filter(|t| t.transform_ok == Some(true)).count();
        Self {
            mode,
            srdel: pct(el, tasks.len()),
            srdt: pct(t_ok, with_golden),
            tasks,
        }
    }
}

pub struct SuiteOptions<'a> {
    pub catalog: &'a Catalog,
    pub examples: &'a ExampleStore,
    /// Per-task outputs go to `<output_root>/<mode>/<task id>/`.
    pub output_root: PathBuf,
    pub workers: usize,
}

/// Re-serializes CSV with LF line endings and minimal quoting.
pub fn canonical_csv(text: &str) -> Result<String, EvalError> {
    let text = text.trim_start_matches('\u{feff}');
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut writer = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::Config(format!("csv: {e}")))?;
        writer.write_record(&record).map_err(|e| EvalError::Config(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| EvalError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv input was utf-8"))
}

/// Task directories of a suite, sorted by name.
pub fn suite_tasks(suite: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let entries = fs::read_dir(suite).map_err(|e| EvalError::Config(format!("{}: {e}", suite.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("manifest.yaml").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(EvalError::Config(format!("{}: no task manifests", suite.display())));
    }
    Ok(dirs)
}

pub fn load_manifest(task_dir: &Path) -> Result<EltManifest, EvalError> {
    let path = task_dir.join("manifest.yaml");
    let text = fs::read_to_string(&path).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
    serde_yaml::from_str(&text).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))
}

/// Clock every suite session runs at, so artifacts are reproducible.
pub fn suite_clock() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2025-01-01T00:00:00Z")
        .expect("valid timestamp")
        .with_timezone(&Utc)
}

/// Runs every task of the suite; a broken manifest fails only its task.
pub fn run_elt_suite(suite: &Path, mode: SuiteMode, options: &SuiteOptions) -> Result<EltReport, EvalError> {
    let dirs = suite_tasks(suite)?;
    let workers = options.workers.max(1);
    let mut results = Vec::with_capacity(dirs.len());
    for chunk in dirs.chunks(workers) {
        let chunk_results: Vec<EltTaskResult> = thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|dir| scope.spawn(move || run_task(dir, mode, options))).collect();
            handles.into_iter().map(|h| h.join().expect("suite task panicked")).collect()
        });
        results.extend(chunk_results);
    }
    results.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(EltReport::from_tasks(mode, results))
}

/// Plays the task's dialogue: the scripted provider on one side, the
/// manifest answers on the other. The second value is set when the
/// simulated user ran out of answers.
pub fn converse(
    m: &EltManifest,
    mode: SuiteMode,
    catalog: &Catalog,
    examples: &ExampleStore,
) -> Result<(Conversation, Option<String>), EvalError> {
    let provider = m.provider(mode)?;
    let at = suite_clock();
    let mut conv = Conversation::new(&m.id, &m.prompt, at, m.engine_config(mode), catalog);
    let mut answers = m.answers.iter();
    let step_err = |e: crate::engine::EngineError| EvalError::Io(format!("engine: {e}"));
    conv.advance(&provider, examples, at).map_err(step_err)?;
    while conv.state.awaiting_input() {
        match answers.next() {
            Some(answer) => conv.answer(&provider, examples, answer, at).map_err(step_err)?,
            None => return Ok((conv, Some("the simulated user has no more answers".to_string()))),
        }
    }
    Ok((conv, None))
}

fn failed(id: &str, detail: String) -> EltTaskResult {
    EltTaskResult {
        id: id.to_string(),
        phase: None,
        questions: 0,
        defaults_applied: false,
        extraction_loading_ok: false,
        transform_ok: None,
        detail: Some(detail),
    }
}

fn run_task(dir: &Path, mode: SuiteMode, options: &SuiteOptions) -> EltTaskResult {
    let dir_name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let manifest = match load_manifest(dir) {
        Ok(m) => m,
        Err(e) => return failed(&dir_name, format!("config error: {e}")),
    };
    match run_manifest(dir, &manifest, mode, options) {
        Ok(result) => result,
        Err(e) => {
            let mut r = failed(&manifest.id, e.to_string());
            r.transform_ok = manifest.transform_golden.as_ref().map(|_| false);
            r
        }
    }
}

fn run_manifest(dir: &Path, m: &EltManifest, mode: SuiteMode, options: &SuiteOptions) -> Result<EltTaskResult, EvalError> {
    let out_dir = options.output_root.join(mode.as_str()).join(&m.id);
    if out_dir.exists() {
        fs::remove_dir_all(&out_dir).map_err(|e| EvalError::Io(format!("{}: {e}", out_dir.display())))?;
    }
    fs::create_dir_all(&out_dir).map_err(|e| EvalError::Io(format!("{}: {e}", out_dir.display())))?;

    let (conv, stalled) = converse(m, mode, options.catalog, options.examples)?;
    write(&out_dir.join("trace.jsonl"), &conv.to_jsonl())?;

    let state = &conv.state;
    let mut result = EltTaskResult {
        id: m.id.clone(),
        phase: Some(state.phase),
        questions: state.question_count,
        defaults_applied: state.defaults_applied,
        extraction_loading_ok: false,
        transform_ok: m.transform_golden.as_ref().map(|_| false),
        detail: stalled.or_else(|| state.failure.clone()),
    };
    let Some(outcome) = state.outcome.as_ref().filter(|o| state.phase == Phase::Done && o.succeeded()) else {
        return Ok(result);
    };
    write(&out_dir.join(format!("{}.yaml", outcome.pipeline.artifact_id())), &serialize(&outcome.pipeline))?;

    let backends = Backends::new(dir.join(&m.fixtures), out_dir.join("stores"));
    let record = execute(&outcome.pipeline, outcome.verdict.status, &ExecOptions::new(backends.clone()))
        .map_err(|e| EvalError::Io(format!("run: {e}")))?;
    write(
        &out_dir.join("run.json"),
        &serde_json::to_string_pretty(&record).expect("run record serializes"),
    )?;
    if !record.succeeded {
        result.detail = Some("pipeline run did not succeed".into());
        return Ok(result);
    }

    let kind = m.expected.destination.kind.as_str();
    let locator = &m.expected.destination.locator;
    let Some(path) = backends.output_path(kind, locator).filter(|p| p.is_file()) else {
        result.detail = Some(format!("nothing was written to {kind} `{locator}`"));
        return Ok(result);
    };
    let loaded = backends
        .read_destination(kind, locator)
        .map_err(|e| EvalError::Io(e.to_string()))?;
    result.extraction_loading_ok =
        loaded.row_count() as u64 == m.expected.row_count && loaded.schema() == m.expected.schema.as_slice();
    if !result.extraction_loading_ok {
        result.detail = Some(format!(
            "destination has {} rows with schema {:?}",
            loaded.row_count(),
            loaded.schema().iter().map(|c| format!("{}:{}", c.name, c.ty)).collect::<Vec<_>>()
        ));
    }

    if let Some(golden) = &m.transform_golden {
        let golden_path = dir.join(golden);
        let expected = fs::read_to_string(&golden_path)
            .map_err(|e| EvalError::Config(format!("{}: {e}", golden_path.display())))?;
        let actual = fs::read_to_string(&path).map_err(|e| EvalError::Io(e.to_string()))?;
        let ok = canonical_csv(&actual)? == canonical_csv(&expected)?;
        result.transform_ok = Some(ok);
        if !ok && result.detail.is_none() {
            result.detail = Some("output differs from the transform golden".into());
        }
    }
    Ok(result)
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_csv_ignores_line_endings_and_needless_quotes() {
        let a = canonical_csv("id,name\r\n1,\"x\"\r\n").unwrap();
        let b = canonical_csv("id,name\n1,x\n").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, canonical_csv("id,name\n1,y\n").unwrap());
    }

    #[test]
    fn percentages() {
        let t = |el, tr| EltTaskResult {
            id: String::new(),
            phase: None,
            questions: 0,
            defaults_applied: false,
            extraction_loading_ok: el,
            transform_ok: tr,
            detail: None,
        };
        let r = EltReport::from_tasks(
            SuiteMode::Full,
            vec![t(true, Some(true)), t(true, Some(false)), t(false, None), t(true, None)],
        );
        assert_eq!(r.srdel, 75.0);
        assert_eq!(r.srdt, 50.0);
    }
}
