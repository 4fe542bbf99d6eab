mod common;

use common::criteria::{self, broken_fixture};
use common::oracles::gini_double_sum;
use pipewright::catalog::Catalog;
use pipewright::eval::{compile_stats, duplication_gini};
use pipewright::pipeline::{validate_compile, ComponentStatus};
use proptest::prelude::*;

#[test]
fn gini_matches_the_published_rows() {
    criteria::gini_reproduction().unwrap();
}

#[test]
fn compile_metrics_bound_the_cases() {
    criteria::compile_metrics().unwrap();
}

#[test]
fn a_broken_tool_fails_only_its_own_task() {
    let report = validate_compile(&broken_fixture(1), &Catalog::curated());
    let failed: Vec<_> = report.tasks.iter().filter(|(_, s)| **s == ComponentStatus::Failed).collect();
    assert_eq!(failed.len(), 1, "{:?}", report.findings);
    assert!(!report.pipeline_ok);
    assert_eq!(report.compiled_fraction(), 0.75);
}

#[test]
fn empty_inputs_are_usage_errors() {
    assert!(duplication_gini(&[]).is_err());
    assert!(compile_stats(&[], 0).is_err());
}

proptest! {
    #[test]
    fn gini_agrees_with_the_double_sum(counts in prop::collection::vec(1u64..50, 1..40)) {
        let got = duplication_gini(&counts).unwrap();
        prop_assert!((got - gini_double_sum(&counts)).abs() < 1e-9);
        prop_assert!((0.0..1.0).contains(&got));
    }
}
