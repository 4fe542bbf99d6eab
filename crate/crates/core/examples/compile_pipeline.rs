//! Builds a pipeline from a complete task spec and reports the compile check.
//!
//!     cargo run --example compile_pipeline -- data/taskspecs/crm-chain.json

use std::path::PathBuf;

use chrono::Utc;
use pipewright::catalog::Catalog;
use pipewright::engine::{Engine, EngineConfig, ExampleStore};
use pipewright::intent::TaskSpec;
use pipewright::pipeline::serialize;
use pipewright::provider::ScriptedProvider;

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/taskspecs/crm-chain.json"));
    let spec: TaskSpec = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();

    // Compiling a filled spec needs no provider calls.
    let provider = ScriptedProvider::new();
    let catalog = Catalog::curated().session_view();
    let examples = ExampleStore::bundled();
    let engine = Engine::new(&provider, &catalog, &examples, EngineConfig::default());
    let outcome = engine.compile_spec("demo", &spec, Utc::now()).unwrap();

    print!("{}", serialize(&outcome.pipeline));
    println!("---");
    println!("tools: {}", outcome.tools.join(", "));
    println!("compiled: {:.0}%  pipeline_ok: {}", 100.0 * outcome.compile.compiled_fraction(), outcome.compile.pipeline_ok);
    println!("verdict: {:?}  artifact: {}", outcome.verdict.status, outcome.pipeline.artifact_id());
}
