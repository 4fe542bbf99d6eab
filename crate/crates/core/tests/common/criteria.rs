//! One check per acceptance criterion. Each returns a short detail line on
//! success and the first violation on failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use pipewright::catalog::{Capability, Catalog, CatalogError, Origin};
use pipewright::engine::{Conversation, Engine, EngineConfig, ExampleStore, LoopState, Phase};
use pipewright::eval::elt::{converse, load_manifest, suite_clock, suite_tasks};
use pipewright::eval::{
    compile_stats, duplication_gini, run_elt_suite, run_variance, similarity, variance_report, SuiteMode, SuiteOptions,
};
use pipewright::exec::{execute_with_datasets, Backends, ExecOptions};
use pipewright::intent::{sufficiency, TaskSpec};
use pipewright::pipeline::{parse, serialize, validate_compile, Binding, PipelineSpec};
use pipewright::provider::{Provider, ProviderError, ProviderRequest, ProviderResponse, ResponseFormat, ScriptedProvider};
use pipewright::safety::{Scanner, VerdictStatus};
use serde::Deserialize;

use super::oracles::{gini_double_sum, ro_ratio_naive, strings_of_len, XorShift};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

pub fn at() -> DateTime<Utc> {
    suite_clock()
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(data(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

// ---------------------------------------------------------------- metrics

/// Published per-dataset rows: unique-version count multisets over 20 runs
/// and the Gini value reported for each.
pub const GINI_ROWS: [(&str, &[u64], f64); 4] = [
    ("Docmatix", &[12, 4, 1, 1, 1, 1], 0.5333),
    ("Grype", &[2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1], 0.0889),
    ("Mathvision", &[4, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1], 0.2133),
    ("Cauldron", &[3, 3, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1], 0.2286),
];

pub fn gini_reproduction() -> Check {
    let started = Instant::now();
    for (name, counts, expected) in GINI_ROWS {
        ensure!(counts.iter().sum::<u64>() == 20, "{name}: multiset does not cover 20 runs");
        let got = duplication_gini(counts).map_err(|e| e.to_string())?;
        ensure!((got - expected).abs() <= 0.00005, "{name}: {got:.6} vs {expected}");
        let oracle = gini_double_sum(counts);
        ensure!((got - oracle).abs() < 1e-12, "{name}: {got} disagrees with the double sum {oracle}");
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("4 rows within 5e-5 in {elapsed:?}"))
}

pub fn variance_script() -> ScriptedProvider {
    ScriptedProvider::from_file(&data("scripts/variance.yaml")).expect("variance script loads")
}

pub fn variance_identity() -> Check {
    let config = EngineConfig {
        retry_base_delay_ms: 0,
        ..EngineConfig::default()
    };
    let run = run_variance(
        "Copy the sales exports into the sales table",
        20,
        &[],
        &variance_script(),
        &Catalog::curated(),
        &ExampleStore::bundled(),
        &config,
        at(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(run.failures.is_empty(), "failed sessions: {:?}", run.failures);
    let r = &run.report;
    ensure!(r.variance_col == 1.0 - r.avg_sim, "scripted run: {} != 1 - {}", r.variance_col, r.avg_sim);
    ensure!(r.unique_versions == 6, "expected 6 versions, got {}", r.unique_versions);
    ensure!((r.duplication_gini - 0.5333).abs() <= 0.00005, "scripted gini {}", r.duplication_gini);

    let mut rng = XorShift(0xC0FF_EE00_D15E_A5E5);
    for _ in 0..200 {
        let n = 2 + rng.below(8) as usize;
        let texts: Vec<String> = (0..n)
            .map(|_| (0..rng.below(12)).map(|_| ['x', 'y', 'z'][rng.below(3) as usize]).collect())
            .collect();
        let r = variance_report(&texts).map_err(|e| e.to_string())?;
        ensure!(r.variance_col == 1.0 - r.avg_sim, "{texts:?}");
    }
    let yolo = 1.0 - 0.8990;
    ensure!(format!("{yolo:.4}") == "0.1010", "YOLO anchor gives {yolo}");
    Ok(format!(
        "scripted N=20: avg_sim {:.4}, variance {:.4}, {} versions, gini {:.4}; 200 random reports",
        r.avg_sim, r.variance_col, r.unique_versions, r.duplication_gini
    ))
}

pub fn similarity_oracle() -> Check {
    let started = Instant::now();
    let by_len: Vec<Vec<String>> = (0..=12).map(|n| strings_of_len(&['a', 'b', 'c'], n)).collect();
    let mut pairs = 0u64;
    for la in 0..=12 {
        for lb in 0..=12 - la {
            for a in &by_len[la] {
                for b in &by_len[lb] {
                    ensure!(similarity(a, b) == ro_ratio_naive(a, b), "{a:?} vs {b:?}");
                    pairs += 1;
                }
            }
        }
    }
    let mut rng = XorShift(0x9E37_79B9_7F4A_7C15);
    let alphabet: Vec<char> = "abcde-_: \n".chars().collect();
    for _ in 0..1000 {
        let mut gen = || -> String {
            let len = rng.below(65) as usize;
            (0..len).map(|_| alphabet[rng.below(alphabet.len() as u64) as usize]).collect()
        };
        let (a, b) = (gen(), gen());
        ensure!(similarity(&a, &b) == ro_ratio_naive(&a, &b), "{a:?} vs {b:?}");
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{pairs} exhaustive + 1000 random pairs in {:.1}s", elapsed.as_secs_f64()))
}

/// The 4-task fixture pipeline with the first `broken` tasks pointing at a
/// tool the catalog does not have.
pub fn broken_fixture(broken: usize) -> PipelineSpec {
    let mut p = parse(&read("pipelines/sales-dedupe.yaml")).expect("fixture parses");
    let ids: Vec<String> = p.tasks.keys().cloned().collect();
    for id in ids.iter().take(broken) {
        let component = p.tasks[id].component.clone();
        p.components.get_mut(&component).unwrap().tool_ref = format!("{component}_missing");
    }
    p
}

pub fn compile_metrics() -> Check {
    let catalog = Catalog::curated();
    let report = |broken| validate_compile(&broken_fixture(broken), &catalog);
    let stats = |runs: &[usize]| compile_stats(&runs.iter().map(|&b| report(b)).collect::<Vec<_>>(), 0);

    let nl = stats(&[4, 4, 4]).map_err(|e| e.to_string())?;
    ensure!((nl.sc, nl.spc) == (0.0, 0.0), "all-fail gave SC {} SPC {}", nl.sc, nl.spc);
    let full = stats(&[0, 0, 0]).map_err(|e| e.to_string())?;
    ensure!((full.sc, full.spc) == (100.0, 100.0), "all-pass gave SC {} SPC {}", full.sc, full.spc);
    let mixed = stats(&[0, 2, 1]).map_err(|e| e.to_string())?;
    ensure!(mixed.per_run == [1.0, 0.5, 0.75], "per-run fractions {:?}", mixed.per_run);
    ensure!(mixed.sc == 75.0, "mixed SC {}", mixed.sc);
    ensure!(format!("{:.2}", mixed.spc) == "33.33", "mixed SPC {}", mixed.spc);
    Ok(format!("NL 0/0, full 100/100, mixed {:.1}/{:.2}", mixed.sc, mixed.spc))
}

// ---------------------------------------------------------------- ELT suite

pub fn elt_options<'a>(catalog: &'a Catalog, examples: &'a ExampleStore, out: &Path) -> SuiteOptions<'a> {
    SuiteOptions {
        catalog,
        examples,
        output_root: out.to_path_buf(),
        workers: 4,
    }
}

pub fn elt_suite() -> Check {
    let started = Instant::now();
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let catalog = Catalog::curated();
    let examples = ExampleStore::bundled();
    let options = elt_options(&catalog, &examples, out.path());
    let suite = data("elt_suite");
    let full = run_elt_suite(&suite, SuiteMode::Full, &options).map_err(|e| e.to_string())?;
    ensure!(full.tasks.len() == 8, "{} tasks", full.tasks.len());
    ensure!(
        full.srdel == 100.0 && full.srdt == 100.0,
        "full mode SRDEL {} SRDT {}: {:?}",
        full.srdel,
        full.srdt,
        full.tasks.iter().filter_map(|t| t.detail.as_ref().map(|d| (&t.id, d))).collect::<Vec<_>>()
    );
    let nq = run_elt_suite(&suite, SuiteMode::NoQuestion, &options).map_err(|e| e.to_string())?;
    let lost = nq.tasks.iter().filter(|t| !t.extraction_loading_ok).count();
    ensure!(lost >= 3 && nq.srdel <= 62.5, "no-question mode lost {lost} tasks, SRDEL {}", nq.srdel);
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "full {}/{}; no_question {}/{} ({lost} under-specified lost) in {:.1}s",
        full.srdel,
        full.srdt,
        nq.srdel,
        nq.srdt,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- safety

#[derive(Debug, Deserialize)]
pub struct CorpusCase {
    pub id: String,
    #[serde(default)]
    pub script: Option<String>,
    #[serde(default)]
    pub parameter: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub loader_tool: Option<String>,
    #[serde(default)]
    pub unrestricted_transform: bool,
    #[serde(default)]
    pub rule: Option<String>,
}

#[derive(Deserialize)]
struct Corpus {
    cases: Vec<CorpusCase>,
}

pub fn corpus(name: &str) -> Vec<CorpusCase> {
    let c: Corpus = serde_yaml::from_str(&read(&format!("safety/{name}.yaml"))).expect("corpus parses");
    c.cases
}

/// The clean fixture pipeline with one corpus case applied, and the catalog
/// to scan it against. Fails when the catalog refuses the case's tool.
pub fn apply_case(case: &CorpusCase) -> Result<(PipelineSpec, Catalog), CatalogError> {
    let mut p = parse(&read("pipelines/sales-dedupe.yaml")).expect("fixture parses");
    let catalog = Catalog::curated().session_view();
    if let Some(script) = &case.script {
        p.components.get_mut("load_table_store").unwrap().script = Some(script.clone());
    }
    if let Some(text) = &case.parameter {
        p.parameters.insert("extra".into(), text.clone());
    }
    if let Some(target) = &case.target {
        p.parameters.insert("target".into(), target.clone());
    }
    if let Some(tool) = &case.loader_tool {
        p.components.get_mut("load_table_store").unwrap().tool_ref = tool.clone();
    }
    if case.unrestricted_transform {
        let mut tool = catalog.get("transform_dedupe").unwrap();
        tool.id = "dedupe_everything".into();
        tool.origin = Origin::Synthesized;
        tool.capability = Capability::Unrestricted;
        catalog.register(tool)?;
        p.components.get_mut("transform_dedupe").unwrap().tool_ref = "dedupe_everything".into();
    }
    Ok((p, catalog))
}

pub fn safety_soundness() -> Check {
    let scanner = Scanner::default();
    let destructive = corpus("destructive");
    let benign = corpus("benign");
    let sanitizable = corpus("sanitizable");
    ensure!(destructive.len() >= 20 && benign.len() >= 20, "corpora too small");
    let mut refused = 0;
    for case in &destructive {
        let (p, catalog) = match apply_case(case) {
            Ok(applied) => applied,
            // The catalog turning the tool away is the earlier of the two
            // checks; the scanner rule only matters if one slips through.
            Err(CatalogError::UnrestrictedSynthesized(_)) if case.rule.as_deref() == Some("cap.unrestricted") => {
                refused += 1;
                continue;
            }
            Err(e) => return Err(format!("`{}`: {e}", case.id)),
        };
        let v = scanner.scan(&p, &catalog);
        ensure!(v.status == VerdictStatus::Rejected, "false negative `{}`: {:?}", case.id, v.status);
        let rule = case.rule.as_deref().unwrap_or_default();
        ensure!(v.findings.iter().any(|f| f.rule == rule), "`{}` missed rule {rule}: {:?}", case.id, v.findings);
    }
    for case in &benign {
        let (p, catalog) = apply_case(case).map_err(|e| e.to_string())?;
        let v = scanner.scan(&p, &catalog);
        ensure!(
            v.status == VerdictStatus::Pass && v.findings.is_empty(),
            "false positive `{}`: {:?}",
            case.id,
            v.findings
        );
    }
    for case in &sanitizable {
        let (p, catalog) = apply_case(case).map_err(|e| e.to_string())?;
        let v = scanner.scan(&p, &catalog);
        ensure!(v.status == VerdictStatus::Sanitized, "`{}` gave {:?}: {:?}", case.id, v.status, v.findings);
        let clean = v.sanitized_pipeline.as_ref().ok_or("no sanitized pipeline")?;
        let again = scanner.scan(clean, &catalog);
        ensure!(
            again.status == VerdictStatus::Pass && again.findings.is_empty(),
            "`{}` is not a fixpoint: {:?}",
            case.id,
            again.findings
        );
    }
    // Known over-approximation: still rejected, and counted in the report.
    let conservative = corpus("conservative");
    for case in &conservative {
        let (p, catalog) = apply_case(case).map_err(|e| e.to_string())?;
        let v = scanner.scan(&p, &catalog);
        let rule = case.rule.as_deref().unwrap_or_default();
        ensure!(
            v.status == VerdictStatus::Rejected && v.findings.iter().any(|f| f.rule == rule),
            "`{}` is no longer rejected; move it to the benign corpus",
            case.id
        );
    }
    Ok(format!(
        "{} destructive rejected ({refused} refused by the catalog), {} benign passed, {} sanitized to a fixpoint; {} prose mentions rejected by design",
        destructive.len(),
        benign.len(),
        sanitizable.len(),
        conservative.len()
    ))
}

// ---------------------------------------------------------------- compiler

pub const TASKSPECS: [&str; 5] = ["crm-chain", "elt-bench-final", "metrics-aggregate", "reviews-cast", "sales-dedupe"];

pub fn taskspec(name: &str) -> TaskSpec {
    serde_json::from_str(&read(&format!("taskspecs/{name}.json"))).expect("task spec parses")
}

pub fn compile_taskspec(spec: &TaskSpec) -> PipelineSpec {
    let provider = ScriptedProvider::new();
    let catalog = Catalog::curated().session_view();
    let examples = ExampleStore::bundled();
    let engine = Engine::new(&provider, &catalog, &examples, EngineConfig::default());
    engine.compile_spec("fixture", spec, at()).expect("fixture compiles").pipeline
}

pub fn compiler_determinism() -> Check {
    for name in TASKSPECS {
        let spec = taskspec(name);
        let first = serialize(&compile_taskspec(&spec));
        for i in 1..100 {
            let again = serialize(&compile_taskspec(&spec));
            ensure!(again == first, "{name}: build {i} differs");
        }
        let parsed = parse(&first).map_err(|e| format!("{name}: {e}"))?;
        ensure!(serialize(&parsed) == first, "{name}: serialize(parse(text)) != text");
        ensure!(parse(&serialize(&parsed)).ok() == Some(parsed), "{name}: parse(serialize(p)) != p");
    }
    let catalog = Catalog::curated();
    for (file, needle) in [("cycle", "cycle"), ("dangling", "transform-9")] {
        let p = parse(&read(&format!("pipelines/{file}.yaml"))).map_err(|e| e.to_string())?;
        let report = validate_compile(&p, &catalog);
        ensure!(!report.pipeline_ok, "{file} fixture compiled");
        let located = report.errors().any(|f| f.task.is_some() && f.message.contains(needle));
        ensure!(located, "{file}: no located error mentioning `{needle}`: {:?}", report.findings);
    }
    Ok(format!("{} specs x 100 builds identical; round-trips hold; cycle and dangling refs rejected", TASKSPECS.len()))
}

// ---------------------------------------------------------------- executor

/// Every suite task's generated pipeline with its fixtures directory.
pub fn bundled_pipelines() -> Vec<(String, PipelineSpec, PathBuf)> {
    let catalog = Catalog::curated();
    let examples = ExampleStore::bundled();
    suite_tasks(&data("elt_suite"))
        .expect("suite loads")
        .into_iter()
        .map(|dir| {
            let m = load_manifest(&dir).expect("manifest loads");
            let (conv, _) = converse(&m, SuiteMode::Full, &catalog, &examples).expect("dialogue runs");
            let outcome = conv.state.outcome.expect("pipeline built");
            (m.id.clone(), outcome.pipeline, dir.join(&m.fixtures))
        })
        .collect()
}

const ROW_DROPPING: [&str; 3] = ["filter", "dedupe", "aggregate"];

/// Declared row-dropping ops, read from the transform params alone.
fn declared_drops(p: &PipelineSpec) -> Vec<String> {
    let mut out = Vec::new();
    for task in p.tasks.values() {
        if let Some(Binding::Literal(text)) = task.inputs.get("row_dropping") {
            out.extend(text.split(',').filter(|s| !s.is_empty()).map(str::to_string));
        }
    }
    out
}

pub fn executor_independence() -> Check {
    let mut audits = 0;
    for (id, pipeline, fixtures) in bundled_pipelines() {
        let status = pipeline.metadata.safety.as_ref().map(|s| s.status).ok_or(format!("{id}: unstamped"))?;
        let mut runs = Vec::new();
        for workers in [1, 4, 8] {
            let stores = tempfile::tempdir().map_err(|e| e.to_string())?;
            let options = ExecOptions::new(Backends::new(&fixtures, stores.path())).with_workers(workers);
            let (record, datasets) = execute_with_datasets(&pipeline, status, &options).map_err(|e| e.to_string())?;
            runs.push((record.without_timings(), datasets, stores));
        }
        for (record, datasets, _) in &runs[1..] {
            ensure!(*record == runs[0].0, "{id}: run record depends on worker count");
            ensure!(*datasets == runs[0].1, "{id}: datasets depend on worker count");
        }

        let (record, datasets, _) = &runs[0];
        let audit = record.audit.as_ref().ok_or(format!("{id}: no audit"))?;
        let extracted: u64 = datasets
            .iter()
            .filter(|(k, _)| k.starts_with("extract"))
            .map(|(_, d)| d.row_count() as u64)
            .sum();
        let declared = declared_drops(&pipeline);
        ensure!(declared.iter().all(|d| ROW_DROPPING.contains(&d.as_str())), "{id}: {declared:?}");
        let reconciles = if declared.is_empty() {
            audit.rows_loaded == extracted
        } else {
            audit.rows_loaded <= extracted.max(declared.iter().any(|d| d == "aggregate") as u64)
        };
        ensure!(audit.rows_extracted == extracted, "{id}: audit saw {} extracted rows, oracle {extracted}", audit.rows_extracted);
        ensure!(audit.passed == reconciles, "{id}: audit {} but reconciliation {reconciles}", audit.passed);
        audits += 1;

        // Hiding the declared drops must flip the audit when rows were dropped.
        if audit.rows_loaded != extracted {
            let mut hidden = pipeline.clone();
            for task in hidden.tasks.values_mut() {
                if task.inputs.contains_key("row_dropping") {
                    task.inputs.insert("row_dropping".into(), Binding::Literal(String::new()));
                }
            }
            hidden.stamp(status);
            let stores = tempfile::tempdir().map_err(|e| e.to_string())?;
            let options = ExecOptions::new(Backends::new(&fixtures, stores.path()));
            let (rec, _) = execute_with_datasets(&hidden, status, &options).map_err(|e| e.to_string())?;
            ensure!(rec.audit.as_ref().is_some_and(|a| !a.passed), "{id}: undeclared drop passed the audit");
            ensure!(!rec.succeeded, "{id}: failed audit still counted as success");
        }
    }
    Ok(format!("{audits} bundled pipelines identical across 1/4/8 workers; audits match reconciliation"))
}

// ---------------------------------------------------------------- loop

/// Provider answering at random: slot assignments (sometimes malformed),
/// questions about any slot, or outright failures.
pub struct ChaosProvider {
    rng: Mutex<XorShift>,
    failure_rate: u64,
}

impl ChaosProvider {
    pub fn new(seed: u64, failure_rate: u64) -> Self {
        Self {
            rng: Mutex::new(XorShift(seed | 1)),
            failure_rate,
        }
    }
}

fn random_assignment(rng: &mut XorShift) -> serde_json::Value {
    use serde_json::json;
    match rng.below(6) {
        0 => json!({"slot": "sources", "value": [{"kind": "local_dir", "locator": "exports/sales"}]}),
        1 => json!({"slot": "destination", "value": {"kind": "table_store", "name": "sales"}}),
        2 => json!({"slot": "destination", "value": {"name": "renamed"}}),
        3 => json!({"slot": "transforms", "value": "none"}),
        4 => json!({"slot": "transforms", "value": [{"op": "dedupe", "params": {}}]}),
        _ => json!({"slot": "constraints", "value": {"owner": "ops"}}),
    }
}

impl Provider for ChaosProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut rng = self.rng.lock().unwrap();
        if rng.below(100) < self.failure_rate {
            return Err(ProviderError::Unavailable("chaos".into()));
        }
        let text = match request.response_format {
            ResponseFormat::JsonObject => match rng.below(10) {
                0 => "not json at all".to_string(),
                1 => r#"{"assignments": [{"slot": "sources", "value": 7}]}"#.to_string(),
                _ => {
                    let k = rng.below(3);
                    let items: Vec<_> = (0..k).map(|_| random_assignment(&mut rng)).collect();
                    serde_json::json!({ "assignments": items }).to_string()
                }
            },
            ResponseFormat::Text => ["Where should the data be stored?", "Which source should I read?", "Any transformations?", "What is the weather like?"]
                [rng.below(4) as usize]
                .to_string(),
        };
        Ok(ProviderResponse::new(text))
    }

    fn name(&self) -> &str {
        "chaos"
    }
}

/// Upper bound on transitions for a budget: each question costs at most
/// Reason, Question, Observe, Distill; acting costs Act, Observe, plus the
/// initial Distill and Reason.
pub fn step_bound(budget: u32) -> usize {
    4 * (budget as usize + 1) + 8
}

/// Drives one randomized dialogue and checks the loop guarantees.
pub fn check_dialogue(seed: u64, budget: u32, failure_rate: u64) -> Check {
    let provider = ChaosProvider::new(seed, failure_rate);
    let catalog = Catalog::curated();
    let examples = ExampleStore::bundled();
    let config = EngineConfig {
        question_budget: budget,
        retry_base_delay_ms: 0,
        provider_attempts: 1,
        ..EngineConfig::default()
    };
    let engine = Engine::new(&provider, &catalog, &examples, config);
    let mut rng = XorShift(seed.rotate_left(17) | 1);
    let mut state = LoopState::new(format!("chaos-{seed}"), "move some data", at());
    let mut steps = 0;
    while !state.phase.is_terminal() {
        ensure!(steps < step_bound(budget), "seed {seed}: no terminal phase after {steps} steps");
        let input = state.awaiting_input().then(|| ["s3 bucket please", "none", "the sales exports"][rng.below(3) as usize]);
        let next = engine.step(&state, input, at()).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(state.phase.can_move_to(next.phase), "seed {seed}: illegal {} -> {}", state.phase, next.phase);
        if next.phase == Phase::Act {
            let missing = sufficiency(&next.spec);
            ensure!(
                missing.is_sufficient() || next.question_count >= budget,
                "seed {seed}: Act with {:?} missing and {} of {budget} questions used",
                missing.missing(),
                next.question_count
            );
        }
        ensure!(next.question_count <= budget, "seed {seed}: {} questions over budget {budget}", next.question_count);
        state = next;
        steps += 1;
    }
    Ok(format!("{:?} after {steps} steps", state.phase))
}

pub fn loop_guarantee() -> Check {
    let mut rng = XorShift(0x5EED_0F10_0BAD);
    let mut outcomes: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..300 {
        let seed = rng.next();
        let budget = rng.below(6) as u32;
        let failure_rate = [0, 5, 30][rng.below(3) as usize];
        let end = check_dialogue(seed, budget, failure_rate)?;
        *outcomes.entry(end.split(' ').next().unwrap_or_default().to_string()).or_default() += 1;
    }
    Ok(format!("300 randomized dialogues terminated: {outcomes:?}"))
}

/// Replays the conversation's trace and compares the final state.
pub fn replays_identically(conv: &Conversation) -> bool {
    Conversation::replay(&conv.to_jsonl(), &Catalog::curated(), &ExampleStore::bundled())
        .map(|r| r.state == conv.state)
        .unwrap_or(false)
}
