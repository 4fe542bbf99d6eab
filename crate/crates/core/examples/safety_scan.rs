//! Scans pipelines before execution: a clean one, a destructive one and one
//! the sanitizer can repair.
//!
//!     cargo run --example safety_scan

use std::path::Path;

use pipewright::catalog::Catalog;
use pipewright::pipeline::parse;
use pipewright::safety::Scanner;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/pipelines");
    let catalog = Catalog::curated();
    let scanner = Scanner::default();

    let clean = parse(&std::fs::read_to_string(dir.join("sales-dedupe.yaml")).unwrap()).unwrap();
    let mut repairable = clean.clone();
    repairable
        .parameters
        .insert("post_sql".into(), "ALTER TABLE sales_clean DROP COLUMN tmp; ANALYZE sales_clean".into());
    let malicious = parse(&std::fs::read_to_string(dir.join("malicious.yaml")).unwrap()).unwrap();

    for (name, p) in [("clean", &clean), ("repairable", &repairable), ("malicious", &malicious)] {
        let v = scanner.scan(p, &catalog);
        println!("{name}: {:?}", v.status);
        for f in &v.findings {
            println!("  {:<24} {:?}  {}  `{}`", f.rule, f.severity, f.location, f.matched);
        }
        if let Some(s) = &v.sanitized_pipeline {
            println!("  rewritten post_sql: {:?}", s.parameters["post_sql"]);
        }
    }
}
