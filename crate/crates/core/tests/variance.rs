mod common;

use common::criteria::{self, at, variance_script};
use pipewright::catalog::Catalog;
use pipewright::engine::{EngineConfig, ExampleStore};
use pipewright::eval::run_variance;

#[test]
fn variance_is_one_minus_average_similarity() {
    criteria::variance_identity().unwrap();
}

#[test]
fn versions_are_counted_on_bodies_not_artifacts() {
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
    .unwrap();
    // Artifact ids cover session metadata, so every session gets its own id
    // even when the bodies coincide.
    let mut distinct = run.pipelines.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 20);
    assert_eq!(run.report.unique_versions, 6);
}
