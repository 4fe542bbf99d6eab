mod common;

use common::criteria::{self, bundled_pipelines};
use pipewright::exec::{execute, Backends, ExecError, ExecOptions};
use pipewright::safety::VerdictStatus;

#[test]
fn results_do_not_depend_on_scheduling() {
    criteria::executor_independence().unwrap();
}

#[test]
fn unapproved_pipelines_do_not_run() {
    let (_, mut pipeline, fixtures) = bundled_pipelines().remove(0);
    let stores = tempfile::tempdir().unwrap();
    let options = ExecOptions::new(Backends::new(&fixtures, stores.path()));
    assert!(matches!(execute(&pipeline, VerdictStatus::Rejected, &options), Err(ExecError::NotApproved(_))));

    // Editing after approval invalidates the stamp.
    pipeline.name.push_str("-edited");
    assert!(execute(&pipeline, VerdictStatus::Pass, &options).is_err());
    assert_eq!(std::fs::read_dir(stores.path()).unwrap().count(), 0);
}
