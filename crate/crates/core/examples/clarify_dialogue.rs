//! Plays the ELT-Bench dialogue: a vague request, three questions, a pipeline.
//!
//!     cargo run --example clarify_dialogue

use std::path::Path;

use chrono::Utc;
use pipewright::catalog::Catalog;
use pipewright::engine::{Conversation, EngineConfig, ExampleStore};
use pipewright::pipeline::serialize;
use pipewright::provider::ScriptedProvider;

fn main() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let provider = ScriptedProvider::from_file(&data.join("scripts/elt_bench_dialogue.yaml")).expect("script");
    let catalog = Catalog::curated();
    let examples = ExampleStore::bundled();

    let prompt = "Ingest the data from the ELT-Bench GitHub repository.";
    println!("user> {prompt}");
    let mut conv = Conversation::new("demo", prompt, Utc::now(), EngineConfig::default(), &catalog);
    conv.advance(&provider, &examples, Utc::now()).unwrap();

    let answers = [
        "git clone https://github.com/uiuc-kang-lab/ELT-Bench",
        "s3 name it cve-bench-new",
        "None, actually change the name of the s3 to elt-bench-new",
    ];
    for answer in answers {
        if let Some(q) = conv.state.open_question() {
            println!("assistant> {}", q.text);
        }
        println!("user> {answer}");
        conv.answer(&provider, &examples, answer, Utc::now()).unwrap();
    }

    println!("\nphase: {} after {} steps", conv.state.phase, conv.entries.len());
    if let Some(outcome) = &conv.state.outcome {
        println!("verdict: {:?}\n", outcome.verdict.status);
        print!("{}", serialize(&outcome.pipeline));
    }
}
