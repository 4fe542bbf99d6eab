//! When no curated tool covers a transform, a session-scoped one is
//! synthesized from the provider's proposal and, once vetted, registered in
//! the session catalog.
//!
//!     cargo run --example tool_synthesis

use pipewright::catalog::{coverage, synthesize_tool, Catalog, DEFAULT_SYNTHESIS_THRESHOLD};
use pipewright::engine::transform_need;
use pipewright::intent::TransformStep;
use pipewright::provider::{RetryPolicy, ScriptedProvider};

fn main() {
    let step = TransformStep::new("map").with_param("column", "status").with_param("fn", "upper");
    let need = transform_need(&step);
    let base = Catalog::curated();
    println!("need: {} (coverage {:.3}, threshold {DEFAULT_SYNTHESIS_THRESHOLD})", need.query, coverage(&base, &need));

    let proposal = r#"{"id": "uppercase_column", "description": "Uppercase the values of one text column",
        "tags": ["uppercase", "text"], "steps": [{"op": "map", "params": {"column": "${column}", "fn": "${fn}"}}]}"#;
    let provider = ScriptedProvider::new().with_script("demo", [proposal]);
    let session = base.session_view();
    let tool = synthesize_tool(&need, &session, &provider, "demo", DEFAULT_SYNTHESIS_THRESHOLD, RetryPolicy::immediate(1))
        .expect("synthesis");

    println!("synthesized {} ({:?}, {:?})", tool.id, tool.origin, tool.capability);
    println!("session catalog: {} tools, curated catalog: {}", session.len(), base.len());
    print!("{}", session.overlay_yaml());
}
