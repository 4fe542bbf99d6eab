//! The bundled ELT task suite, with and without clarifying questions.
//!
//!     cargo run --example elt_suite

use std::path::Path;

use pipewright::catalog::Catalog;
use pipewright::engine::ExampleStore;
use pipewright::eval::{run_elt_suite, table, SuiteMode, SuiteOptions};

fn main() {
    let suite = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/elt_suite");
    let catalog = Catalog::curated();
    let examples = ExampleStore::bundled();
    let options = SuiteOptions {
        catalog: &catalog,
        examples: &examples,
        output_root: std::env::temp_dir().join("pipewright-example-elt"),
        workers: 4,
    };
    for mode in [SuiteMode::Full, SuiteMode::NoQuestion] {
        let report = run_elt_suite(&suite, mode, &options).unwrap();
        println!("mode: {}", mode.as_str());
        print!("{}", table::elt_table(&report));
        println!();
    }
}
