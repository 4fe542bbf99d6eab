use serde::{Deserialize, Serialize};

use crate::intent::{Slot, TaskSpec};
use crate::retrieval::{rank_top_k, RelevanceScorer, TfIdfIndex};

const BUNDLED_EXAMPLES: &str = include_str!("../../data/examples.yaml");

/// A reference pipeline shown to the generator as a few-shot example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineExample {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
    /// IR YAML of the example pipeline.
    #[serde(default)]
    pub pipeline: String,
}

impl PipelineExample {
    fn document(&self) -> String {
        format!("{} {}", self.description, self.tags.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub example: PipelineExample,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExampleStore {
    examples: Vec<PipelineExample>,
}

impl ExampleStore {
    pub fn new(examples: Vec<PipelineExample>) -> Self {
        Self { examples }
    }

    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        Ok(Self::new(serde_yaml::from_str(text)?))
    }

    /// The small bundled set; kept deliberately few.
    pub fn bundled() -> Self {
        Self::from_yaml(BUNDLED_EXAMPLES).expect("bundled examples are valid")
    }

    pub fn examples(&self) -> &[PipelineExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Top-k examples for free text, ties broken by id.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<ScoredExample> {
        if self.examples.is_empty() {
            return Vec::new();
        }
        let docs: Vec<String> = self.examples.iter().map(PipelineExample::document).collect();
        let index = TfIdfIndex::new(&docs);
        let scores = RelevanceScorer::scores(&index, query);
        let ids: Vec<&str> = self.examples.iter().map(|e| e.id.as_str()).collect();
        rank_top_k(&scores, &ids, k.max(1))
            .into_iter()
            .map(|(i, score)| ScoredExample {
                example: self.examples[i].clone(),
                score,
            })
            .collect()
    }
}

/// Retrieval text for a task: source and destination kinds, locators and
/// transform ops.
pub fn spec_query_text(spec: &TaskSpec) -> String {
    let mut words = Vec::new();
    if let Some(sources) = spec.sources.value() {
        for s in sources {
            words.push(s.kind.as_str().replace('_', " "));
            words.push(s.locator.clone());
        }
    }
    if let Slot::Filled(d) = &spec.destination {
        words.push(d.kind.as_str().replace('_', " "));
        words.push(d.name.clone());
    }
    for step in spec.transform_steps() {
        words.push(step.op.clone());
    }
    words.join(" ")
}

/// Top-k examples for a task spec. An empty store yields an empty list.
pub fn retrieve_examples(spec: &TaskSpec, store: &ExampleStore, k: usize) -> Vec<ScoredExample> {
    store.retrieve(&spec_query_text(spec), k)
}
