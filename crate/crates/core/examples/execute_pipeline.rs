//! Runs the sales dedupe fixture pipeline on the local backends.
//!
//!     cargo run --example execute_pipeline

use std::path::Path;

use pipewright::catalog::Catalog;
use pipewright::exec::{execute, Backends, ExecOptions};
use pipewright::pipeline::parse;
use pipewright::safety::Scanner;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let mut pipeline = parse(&std::fs::read_to_string(root.join("pipelines/sales-dedupe.yaml")).unwrap()).unwrap();
    let verdict = Scanner::default().scan(&pipeline, &Catalog::curated());
    pipeline.stamp(verdict.status);

    let stores = std::env::temp_dir().join("pipewright-example-stores");
    let backends = Backends::new(root.join("elt_suite/sales-dedupe/fixtures"), &stores);
    let record = execute(&pipeline, verdict.status, &ExecOptions::new(backends).with_workers(4)).unwrap();

    for (task, r) in &record.tasks {
        println!("{task:<12} {:?}  in {:>3}  out {:>3}", r.status, r.rows_in, r.rows_out);
    }
    println!("audit: {:?}", record.audit);
    println!("output: {}", stores.join("table_store/sales_clean.csv").display());
}
