//! Ranks curated tools against free-text needs.
//!
//!     cargo run --example tool_retrieval -- "copy files into a bucket"

use pipewright::catalog::{Catalog, RetrievalQuery};

fn main() {
    let catalog = Catalog::curated();
    let queries: Vec<String> = match std::env::args().nth(1) {
        Some(q) => vec![q],
        None => vec![
            "read csv files from a local directory".into(),
            "write rows to an s3 bucket".into(),
            "remove duplicate rows".into(),
            "compare extracted and loaded row counts".into(),
        ],
    };
    for q in queries {
        println!("{q}");
        for hit in catalog.retrieve(&RetrievalQuery::new(&q, 3)) {
            println!("  {:.3}  {:<28} {:?}", hit.score, hit.tool.id, hit.tool.role);
        }
    }
}
