//! The ELT-Bench clarification dialogue end to end.

mod common;

use common::criteria::{at, data, replays_identically};
use pipewright::catalog::Catalog;
use pipewright::engine::{Conversation, EngineConfig, ExampleStore, Phase};
use pipewright::exec::{execute, Backends, ExecOptions};
use pipewright::intent::{DestinationKind, Slot};
use pipewright::provider::ScriptedProvider;
use pipewright::safety::VerdictStatus;

const PROMPT: &str = "Ingest the data from the ELT-Bench GitHub repository.";
const ANSWERS: [&str; 3] = [
    "git clone https://github.com/uiuc-kang-lab/ELT-Bench",
    "s3 name it cve-bench-new",
    "None, actually change the name of the s3 to elt-bench-new",
];

fn dialogue() -> (Conversation, Vec<String>) {
    let provider = ScriptedProvider::from_file(&data("scripts/elt_bench_dialogue.yaml")).unwrap();
    let catalog = Catalog::curated();
    let examples = ExampleStore::bundled();
    let config = EngineConfig {
        retry_base_delay_ms: 0,
        ..EngineConfig::default()
    };
    let mut conv = Conversation::new("elt-bench", PROMPT, at(), config, &catalog);
    conv.advance(&provider, &examples, at()).unwrap();
    let mut asked = Vec::new();
    for answer in ANSWERS {
        asked.push(conv.state.open_question().expect("a question is open").text.clone());
        conv.answer(&provider, &examples, answer, at()).unwrap();
    }
    assert_eq!(provider.calls("elt-bench"), 7);
    (conv, asked)
}

#[test]
fn three_questions_then_a_pipeline() {
    let (conv, asked) = dialogue();
    assert_eq!(conv.state.phase, Phase::Done, "{:?}", conv.state.failure);
    assert_eq!(conv.state.question_count, 3);
    assert!(asked[0].contains("stored"), "{asked:?}");
    assert!(asked[2].to_lowercase().contains("transformation"), "{asked:?}");

    let Slot::Filled(dest) = &conv.state.spec.destination else {
        panic!("destination: {:?}", conv.state.spec.destination);
    };
    assert_eq!(dest.kind, DestinationKind::ObjectStoreDir);
    assert_eq!(dest.name, "elt-bench-new");
    assert_eq!(conv.state.spec.transforms, Slot::ExplicitNone);

    let outcome = conv.state.outcome.as_ref().unwrap();
    assert_eq!(outcome.verdict.status, VerdictStatus::Pass);
    assert!(outcome.compile.pipeline_ok);
    assert_eq!(outcome.pipeline.tasks.len(), 3, "extract, load, validate");
    assert_eq!(outcome.pipeline.parameters["target"], "elt-bench-new/data.csv");
}

#[test]
fn generated_pipeline_runs_against_the_fixture_repository() {
    let (conv, _) = dialogue();
    let pipeline = &conv.state.outcome.as_ref().unwrap().pipeline;
    let stores = tempfile::tempdir().unwrap();
    let fixtures = data("elt_suite/elt-bench-repo/fixtures");
    let record = execute(pipeline, VerdictStatus::Pass, &ExecOptions::new(Backends::new(fixtures, stores.path()))).unwrap();
    assert!(record.succeeded, "{record:?}");
    assert!(record.audit.unwrap().passed);
    assert!(stores.path().join("object_store/elt-bench-new/data.csv").is_file());
}

#[test]
fn trace_replays_to_the_same_state() {
    let (conv, _) = dialogue();
    assert!(replays_identically(&conv));
    let text = conv.to_jsonl();
    assert_eq!(text.lines().count(), conv.entries.len() + 1);
    assert!(!text.contains("Authorization"));
}
