//! Local execution of approved pipelines.
//!
//! Tasks run on a pool of worker threads in dependency order. A task becomes
//! ready once every dependency has finished; among ready tasks the smallest
//! id is taken first. A failed task causes all of its transitive dependents
//! to be skipped. Task results depend only on task inputs, so the run record
//! is the same for any worker count.

mod backends;
pub mod dataset;
pub mod transform;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backends::Backends;
pub use dataset::{Column, ColumnType, Dataset, Value};
pub use transform::{AggFn, Measure, TransformError, TransformOp};

use crate::catalog::{substitute, Implementation};
use crate::intent::TransformStep;
use crate::pipeline::{split_ref, Binding, PipelineSpec};
use crate::safety::VerdictStatus;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("io: {0}")]
    Io(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("binding: {0}")]
    Binding(String),
    #[error("pipeline is not approved for execution: {0}")]
    NotApproved(String),
    #[error("invalid pipeline: {0}")]
    Invalid(String),
}

impl ExecError {
    fn kind(&self) -> FailureKind {
        match self {
            ExecError::Io(_) => FailureKind::Io,
            ExecError::Schema(_) => FailureKind::Schema,
            ExecError::Transform(_) => FailureKind::Transform,
            _ => FailureKind::Binding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResult {
    pub rows_extracted: u64,
    pub rows_loaded: u64,
    /// Whether the pipeline declares any row-dropping step.
    pub row_dropping: bool,
    pub passed: bool,
}

impl AuditResult {
    /// Without declared row-dropping steps every extracted row must land.
    /// Otherwise the load may only shrink, except that an aggregate of an
    /// empty input still yields one row.
    pub fn evaluate(rows_extracted: u64, rows_loaded: u64, declared: &[String]) -> Self {
        let row_dropping = !declared.is_empty();
        let passed = if row_dropping {
            let floor = if declared.iter().any(|d| d == "aggregate") { 1 } else { 0 };
            rows_loaded <= rows_extracted.max(floor)
        } else {
            rows_loaded == rows_extracted
        };
        Self {
            rows_extracted,
            rows_loaded,
            row_dropping,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutput {
    Dataset(Arc<Dataset>),
    Count(u64),
    Audit(AuditResult),
}

impl TaskOutput {
    fn rows(&self) -> u64 {
        match self {
            TaskOutput::Dataset(d) => d.row_count() as u64,
            TaskOutput::Count(n) => *n,
            TaskOutput::Audit(a) => a.rows_loaded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Io,
    Schema,
    Transform,
    Binding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskStatus {
    Succeeded,
    Failed { kind: FailureKind, message: String },
    Skipped { cause: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    #[serde(flatten)]
    pub status: TaskStatus,
    pub rows_in: u64,
    pub rows_out: u64,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub pipeline: String,
    pub pipeline_digest: String,
    pub tasks: BTreeMap<String, TaskRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditResult>,
    pub succeeded: bool,
    pub wall_time_ms: u64,
}

impl RunRecord {
    /// The record with timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> RunRecord {
        let mut r = self.clone();
        r.wall_time_ms = 0;
        for t in r.tasks.values_mut() {
            t.wall_time_ms = 0;
        }
        r
    }
}

/// What to aggregate for a summary.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySpec {
    #[serde(default)]
    pub group_by: Vec<String>,
    pub measures: Vec<transform::Measure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Bar,
    Line,
}

/// Rendering hints for an aggregation table. `x` is the first group-by
/// column (absent for a grand total), `y` the first measure, and `data` the
/// table rows as JSON objects keyed by column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<String>,
    pub y: String,
    pub data: Vec<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// The aggregate as CSV.
    pub table: String,
    pub chart: ChartSpec,
}

/// Aggregation table plus a chart spec. Numeric x axes get a line chart,
/// everything else a bar chart.
pub fn emit_summary(data: &Dataset, spec: &SummarySpec) -> Result<Summary, TransformError> {
    let table = transform::aggregate(data, &spec.group_by, &spec.measures)?;
    let x = spec.group_by.first().cloned();
    let kind = match x.as_deref().and_then(|c| table.column(c)) {
        Some(col) if col.ty.is_numeric() => ChartKind::Line,
        _ => ChartKind::Bar,
    };
    let rows = table
        .rows()
        .iter()
        .map(|row| {
            table
                .schema()
                .iter()
                .zip(row)
                .map(|(c, v)| (c.name.clone(), v.to_json()))
                .collect()
        })
        .collect();
    Ok(Summary {
        table: table.to_csv(),
        chart: ChartSpec {
            kind,
            x,
            y: spec.measures[0].output_name(),
            data: rows,
        },
    })
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub workers: usize,
    pub backends: Backends,
}

impl ExecOptions {
    pub fn new(backends: Backends) -> Self {
        Self { workers: 4, backends }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }
}

/// Refuses anything without a passing verdict whose stamp matches the
/// pipeline content.
pub fn check_approval(pipeline: &PipelineSpec, verdict: VerdictStatus) -> Result<(), ExecError> {
    if !verdict.is_executable() {
        return Err(ExecError::NotApproved(format!("verdict is {verdict:?}")));
    }
    let Some(stamp) = &pipeline.metadata.safety else {
        return Err(ExecError::NotApproved("pipeline carries no safety stamp".into()));
    };
    if stamp.status != verdict {
        return Err(ExecError::NotApproved("stamp status differs from the supplied verdict".into()));
    }
    if stamp.approved_digest != pipeline.content_digest() {
        return Err(ExecError::NotApproved("pipeline changed after approval".into()));
    }
    Ok(())
}

struct Graph {
    order: Vec<String>,
    deps: HashMap<String, BTreeSet<String>>,
    dependents: HashMap<String, Vec<String>>,
}

fn graph(pipeline: &PipelineSpec) -> Result<Graph, ExecError> {
    let mut deps = HashMap::new();
    let mut dependents: HashMap<String, Vec<String>> = HashMap::new();
    for (id, task) in &pipeline.tasks {
        if !pipeline.components.contains_key(&task.component) {
            return Err(ExecError::Invalid(format!("task `{id}` uses unknown component `{}`", task.component)));
        }
        let d = task.dependencies();
        for dep in &d {
            if !pipeline.tasks.contains_key(dep) {
                return Err(ExecError::Invalid(format!("task `{id}` depends on unknown task `{dep}`")));
            }
            dependents.entry(dep.clone()).or_default().push(id.clone());
        }
        deps.insert(id.clone(), d);
    }
    let mut indegree: BTreeMap<&String, usize> = deps.iter().map(|(k, v)| (k, v.len())).collect();
    let mut ready: BTreeSet<&String> = indegree.iter().filter(|(_, n)| **n == 0).map(|(k, _)| *k).collect();
    let mut order = Vec::new();
    while let Some(id) = ready.pop_first() {
        order.push(id.clone());
        for child in dependents.get(id).into_iter().flatten() {
            let n = indegree.get_mut(child).expect("known task");
            *n -= 1;
            if *n == 0 {
                ready.insert(child);
            }
        }
    }
    if order.len() != pipeline.tasks.len() {
        let stuck: Vec<&str> = pipeline.tasks.keys().filter(|k| !order.contains(k)).map(String::as_str).collect();
        return Err(ExecError::Invalid(format!("dependency cycle among {stuck:?}")));
    }
    Ok(Graph { order, deps, dependents })
}

#[derive(Default)]
struct State {
    ready: BTreeSet<String>,
    waiting: HashMap<String, usize>,
    outputs: HashMap<String, BTreeMap<String, TaskOutput>>,
    records: BTreeMap<String, TaskRecord>,
    running: usize,
}

/// Runs an approved pipeline.
pub fn execute(pipeline: &PipelineSpec, verdict: VerdictStatus, options: &ExecOptions) -> Result<RunRecord, ExecError> {
    execute_with_datasets(pipeline, verdict, options).map(|(record, _)| record)
}

/// Like [`execute`], also returning every dataset produced, keyed by
/// `task.output`.
pub fn execute_with_datasets(
    pipeline: &PipelineSpec,
    verdict: VerdictStatus,
    options: &ExecOptions,
) -> Result<(RunRecord, BTreeMap<String, Arc<Dataset>>), ExecError> {
    check_approval(pipeline, verdict)?;
    let g = graph(pipeline)?;
    let total = g.order.len();
    let started = Instant::now();

    let mut state = State::default();
    for id in &g.order {
        let n = g.deps[id].len();
        if n == 0 {
            state.ready.insert(id.clone());
        } else {
            state.waiting.insert(id.clone(), n);
        }
    }
    let shared = (Mutex::new(state), Condvar::new());

    thread::scope(|scope| {
        for _ in 0..options.workers.max(1) {
            scope.spawn(|| worker(pipeline, &g, &options.backends, &shared, total));
        }
    });

    let state = shared.0.into_inner().expect("worker panicked");
    let audit = state.outputs.values().flat_map(|o| o.values()).find_map(|o| match o {
        TaskOutput::Audit(a) => Some(a.clone()),
        _ => None,
    });
    let succeeded = state.records.values().all(|r| r.status == TaskStatus::Succeeded)
        && audit.as_ref().is_none_or(|a| a.passed);
    let datasets = state
        .outputs
        .iter()
        .flat_map(|(task, outs)| {
            outs.iter().filter_map(move |(name, o)| match o {
                TaskOutput::Dataset(d) => Some((format!("{task}.{name}"), Arc::clone(d))),
                _ => None,
            })
        })
        .collect();
    let record = RunRecord {
        pipeline: pipeline.name.clone(),
        pipeline_digest: pipeline.content_digest(),
        tasks: state.records,
        audit,
        succeeded,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    Ok((record, datasets))
}

fn worker(pipeline: &PipelineSpec, g: &Graph, backends: &Backends, shared: &(Mutex<State>, Condvar), total: usize) {
    let (lock, cvar) = shared;
    loop {
        let (id, inputs) = {
            let mut st = lock.lock().unwrap();
            loop {
                if st.records.len() == total {
                    return;
                }
                if let Some(id) = st.ready.pop_first() {
                    st.running += 1;
                    let inputs = gather_inputs(pipeline, &id, &st.outputs);
                    break (id, inputs);
                }
                st = cvar.wait(st).unwrap();
            }
        };

        let t0 = Instant::now();
        let result = inputs.and_then(|inputs| run_task(pipeline, &id, inputs, backends));
        let elapsed = t0.elapsed().as_millis() as u64;

        let mut st = lock.lock().unwrap();
        st.running -= 1;
        let record = match &result {
            Ok((rows_in, outputs)) => TaskRecord {
                status: TaskStatus::Succeeded,
                rows_in: *rows_in,
                rows_out: outputs.values().map(TaskOutput::rows).max().unwrap_or(0),
                wall_time_ms: elapsed,
            },
            Err(e) => TaskRecord {
                status: TaskStatus::Failed {
                    kind: e.kind(),
                    message: e.to_string(),
                },
                rows_in: 0,
                rows_out: 0,
                wall_time_ms: elapsed,
            },
        };
        if let Ok((_, outputs)) = result {
            st.outputs.insert(id.clone(), outputs);
        }
        st.records.insert(id.clone(), record);
        finish(&mut st, g, &id);
        cvar.notify_all();
    }
}

/// Releases dependents of a finished task; dependents of a failed or
/// skipped task are skipped once all their inputs have settled.
fn finish(st: &mut State, g: &Graph, id: &str) {
    let mut pending = vec![id.to_string()];
    while let Some(done) = pending.pop() {
        for child in g.dependents.get(&done).into_iter().flatten() {
            let n = st.waiting.get_mut(child).expect("child is waiting");
            *n -= 1;
            if *n > 0 {
                continue;
            }
            st.waiting.remove(child);
            let blocked: Vec<&String> = g.deps[child]
                .iter()
                .filter(|d| st.records.get(*d).is_none_or(|r| r.status != TaskStatus::Succeeded))
                .collect();
            if blocked.is_empty() {
                st.ready.insert(child.clone());
            } else {
                let cause = format!("upstream {} did not succeed", blocked.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
                st.records.insert(
                    child.clone(),
                    TaskRecord {
                        status: TaskStatus::Skipped { cause },
                        rows_in: 0,
                        rows_out: 0,
                        wall_time_ms: 0,
                    },
                );
                pending.push(child.clone());
            }
        }
    }
}

enum Input {
    Text(String),
    Output(TaskOutput),
}

fn gather_inputs(
    pipeline: &PipelineSpec,
    id: &str,
    outputs: &HashMap<String, BTreeMap<String, TaskOutput>>,
) -> Result<BTreeMap<String, Input>, ExecError> {
    let task = &pipeline.tasks[id];
    let mut out = BTreeMap::new();
    for (name, binding) in &task.inputs {
        let value = match binding {
            Binding::Literal(s) => Input::Text(s.clone()),
            Binding::Param(p) => Input::Text(
                pipeline
                    .parameters
                    .get(p)
                    .cloned()
                    .ok_or_else(|| ExecError::Binding(format!("unknown parameter `{p}`")))?,
            ),
            Binding::Upstream(refs) => {
                let mut parts = Vec::new();
                for r in refs {
                    let (task, output) = split_ref(r).ok_or_else(|| ExecError::Binding(format!("bad reference `{r}`")))?;
                    let o = outputs
                        .get(task)
                        .and_then(|m| m.get(output))
                        .ok_or_else(|| ExecError::Binding(format!("`{r}` is not available")))?;
                    parts.push(o.clone());
                }
                Input::Output(merge(parts, refs.join("+"))?)
            }
        };
        out.insert(name.clone(), value);
    }
    Ok(out)
}

/// Concatenates datasets or sums counts.
fn merge(parts: Vec<TaskOutput>, provenance: String) -> Result<TaskOutput, ExecError> {
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().expect("one part"));
    }
    if parts.iter().all(|p| matches!(p, TaskOutput::Count(_))) {
        return Ok(TaskOutput::Count(parts.iter().map(TaskOutput::rows).sum()));
    }
    let mut datasets = Vec::new();
    for p in parts {
        match p {
            TaskOutput::Dataset(d) => datasets.push((*d).clone()),
            _ => return Err(ExecError::Binding("cannot merge mixed outputs".into())),
        }
    }
    Ok(TaskOutput::Dataset(Arc::new(Dataset::concat(datasets, &provenance)?)))
}

fn text<'a>(inputs: &'a BTreeMap<String, Input>, name: &str) -> Result<&'a str, ExecError> {
    match inputs.get(name) {
        Some(Input::Text(s)) => Ok(s),
        _ => Err(ExecError::Binding(format!("input `{name}` must be a string"))),
    }
}

fn dataset<'a>(inputs: &'a BTreeMap<String, Input>, name: &str) -> Result<&'a Arc<Dataset>, ExecError> {
    match inputs.get(name) {
        Some(Input::Output(TaskOutput::Dataset(d))) => Ok(d),
        _ => Err(ExecError::Binding(format!("input `{name}` must be a dataset"))),
    }
}

fn count(inputs: &BTreeMap<String, Input>, name: &str) -> Result<u64, ExecError> {
    match inputs.get(name) {
        Some(Input::Output(TaskOutput::Count(n))) => Ok(*n),
        _ => Err(ExecError::Binding(format!("input `{name}` must be a count"))),
    }
}

fn params(inputs: &BTreeMap<String, Input>) -> Result<BTreeMap<String, serde_json::Value>, ExecError> {
    match inputs.get("params") {
        None => Ok(BTreeMap::new()),
        Some(Input::Text(s)) => serde_json::from_str(s).map_err(|e| ExecError::Binding(format!("params: {e}"))),
        Some(_) => Err(ExecError::Binding("input `params` must be JSON text".into())),
    }
}

type TaskResult = (u64, BTreeMap<String, TaskOutput>);

fn run_task(pipeline: &PipelineSpec, id: &str, inputs: BTreeMap<String, Input>, backends: &Backends) -> Result<TaskResult, ExecError> {
    let component = &pipeline.components[&pipeline.tasks[id].component];
    let rows_in: u64 = inputs
        .values()
        .map(|i| match i {
            Input::Output(TaskOutput::Dataset(d)) => d.row_count() as u64,
            _ => 0,
        })
        .sum();
    let single = |name: &str, out: TaskOutput| BTreeMap::from([(name.to_string(), out)]);
    let out = match &component.implementation {
        Implementation::Dsl(steps) => {
            let steps = substitute(steps, &params(&inputs)?);
            let mut data = (**dataset(&inputs, "rows_in")?).clone();
            for step in &steps {
                data = transform::run_transform(step, &data)?;
            }
            single("rows_out", TaskOutput::Dataset(Arc::new(data)))
        }
        Implementation::Builtin(name) => {
            let (family, kind) = name.split_once('.').unwrap_or((name.as_str(), ""));
            match family {
                "extract" => {
                    let d = backends.extract(kind, text(&inputs, "locator")?)?;
                    single("rows_out", TaskOutput::Dataset(Arc::new(d)))
                }
                "transform" => {
                    let step = TransformStep {
                        op: kind.to_string(),
                        params: params(&inputs)?,
                    };
                    let d = transform::run_transform(&step, dataset(&inputs, "rows_in")?)?;
                    single("rows_out", TaskOutput::Dataset(Arc::new(d)))
                }
                "load" => {
                    let n = backends.load(kind, text(&inputs, "target")?, dataset(&inputs, "rows_in")?)?;
                    single("rows_loaded", TaskOutput::Count(n))
                }
                "validate" if kind == "row_count_compare" => {
                    let extracted = dataset(&inputs, "extracted")?.row_count() as u64;
                    let loaded = count(&inputs, "loaded")?;
                    let declared: Vec<String> = text(&inputs, "row_dropping")?
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect();
                    single("audit", TaskOutput::Audit(AuditResult::evaluate(extracted, loaded, &declared)))
                }
                _ => return Err(ExecError::Invalid(format!("unknown builtin `{name}`"))),
            }
        }
    };
    Ok((rows_in, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_empty_dataset_is_empty() {
        let d = Dataset::empty(vec![Column::new("severity", ColumnType::String)], "t");
        let spec = SummarySpec {
            group_by: vec!["severity".into()],
            measures: vec![transform::Measure::count()],
        };
        let s = emit_summary(&d, &spec).unwrap();
        assert_eq!(s.table, "severity,count\n");
        assert!(s.chart.data.is_empty());
        assert_eq!(s.chart.kind, ChartKind::Bar);
    }

    #[test]
    fn audit_rules() {
        assert!(AuditResult::evaluate(5, 5, &[]).passed);
        assert!(!AuditResult::evaluate(5, 4, &[]).passed);
        assert!(AuditResult::evaluate(5, 3, &["filter".into()]).passed);
        assert!(!AuditResult::evaluate(5, 6, &["dedupe".into()]).passed);
        assert!(AuditResult::evaluate(0, 1, &["aggregate".into()]).passed);
        assert!(!AuditResult::evaluate(0, 1, &["filter".into()]).passed);
    }
}
