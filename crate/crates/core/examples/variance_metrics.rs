//! Twenty sessions on one prompt, compared pairwise.
//!
//!     cargo run --example variance_metrics

use std::path::Path;

use chrono::Utc;
use pipewright::catalog::Catalog;
use pipewright::engine::{EngineConfig, ExampleStore};
use pipewright::eval::{duplication_gini, run_variance, table};
use pipewright::provider::ScriptedProvider;

fn main() {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scripts/variance.yaml");
    let provider = ScriptedProvider::from_file(&script).unwrap();
    let run = run_variance(
        "Copy the sales exports into the sales table",
        20,
        &[],
        &provider,
        &Catalog::curated(),
        &ExampleStore::bundled(),
        &EngineConfig::default(),
        Utc::now(),
    )
    .unwrap();
    print!("{}", table::variance_table(&[("scripted".to_string(), run.report.clone())]));

    println!("\nduplication Gini for other version-count multisets:");
    for counts in [&[20u64][..], &[10, 10], &[12, 4, 1, 1, 1, 1], &[1; 20]] {
        println!("  {counts:?} -> {:.4}", duplication_gini(counts).unwrap());
    }
}
