use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use thiserror::Error;

use super::{Binding, ComponentSpec, PipelineMetadata, PipelineSpec, PipelineTask, IR_VERSION};
use crate::catalog::{Implementation, ToolSpec};
use crate::exec::transform::is_row_dropping;
use crate::intent::{canonical_json, Slot, SlotName, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("slot `{0}` is not filled")]
    Incomplete(SlotName),
    #[error("tool selection does not match the task: {0}")]
    Selection(String),
}

/// Tools chosen for each need: one extractor per source, one tool per
/// transform step, a loader and a validator.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedTools {
    pub extractors: Vec<ToolSpec>,
    pub transforms: Vec<ToolSpec>,
    pub loader: ToolSpec,
    pub validator: ToolSpec,
}

fn component(tool: &ToolSpec) -> ComponentSpec {
    ComponentSpec {
        tool_ref: tool.id.clone(),
        implementation: tool.implementation.clone(),
        inputs: tool.interface.inputs.clone(),
        outputs: tool.interface.outputs.clone(),
        script: None,
    }
}

fn slug(text: &str) -> String {
    let s: String = text
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let s = s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-");
    if s.is_empty() {
        "pipeline".into()
    } else {
        s
    }
}

/// Lays out `extract-* -> transform-* -> load -> validate`. Multiple sources
/// fan in to the first transform (or to the loader when there is none).
pub fn build(
    spec: &TaskSpec,
    tools: &SelectedTools,
    session_id: &str,
    created_at: DateTime<Utc>,
) -> Result<PipelineSpec, BuildError> {
    let sources = spec.sources.value().ok_or(BuildError::Incomplete(SlotName::Sources))?;
    let destination = spec.destination.value().ok_or(BuildError::Incomplete(SlotName::Destination))?;
    let steps = match &spec.transforms {
        Slot::Filled(steps) => steps.clone(),
        Slot::ExplicitNone => Vec::new(),
        Slot::Unfilled => return Err(BuildError::Incomplete(SlotName::Transforms)),
    };
    if sources.is_empty() {
        return Err(BuildError::Incomplete(SlotName::Sources));
    }
    if tools.extractors.len() != sources.len() {
        return Err(BuildError::Selection(format!(
            "{} sources but {} extractors",
            sources.len(),
            tools.extractors.len()
        )));
    }
    if tools.transforms.len() != steps.len() {
        return Err(BuildError::Selection(format!(
            "{} transform steps but {} transform tools",
            steps.len(),
            tools.transforms.len()
        )));
    }

    let mut components = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    let mut tasks = BTreeMap::new();
    let mut add = |tool: &ToolSpec| {
        components.entry(tool.id.clone()).or_insert_with(|| component(tool));
        provenance.insert(tool.id.clone(), tool.origin);
        tool.id.clone()
    };

    let mut extract_refs = Vec::new();
    for (i, (source, tool)) in sources.iter().zip(&tools.extractors).enumerate() {
        let id = format!("extract-{}", i + 1);
        tasks.insert(
            id.clone(),
            PipelineTask {
                component: add(tool),
                inputs: BTreeMap::from([("locator".into(), Binding::Literal(source.locator.clone()))]),
                depends_on: Vec::new(),
            },
        );
        extract_refs.push(format!("{id}.rows_out"));
    }

    let mut current = extract_refs.clone();
    let mut dropping = BTreeSet::new();
    for (i, (step, tool)) in steps.iter().zip(&tools.transforms).enumerate() {
        let id = format!("transform-{}", i + 1);
        let params = canonical_json(&serde_json::to_value(&step.params).expect("params serialize"));
        tasks.insert(
            id.clone(),
            PipelineTask {
                component: add(tool),
                inputs: BTreeMap::from([
                    ("rows_in".into(), Binding::Upstream(current.clone())),
                    ("params".into(), Binding::Literal(params)),
                ]),
                depends_on: Vec::new(),
            },
        );
        match &tool.implementation {
            Implementation::Builtin(b) => {
                if let Some(op) = b.strip_prefix("transform.").filter(|op| is_row_dropping(op)) {
                    dropping.insert(op.to_string());
                }
            }
            Implementation::Dsl(dsl) => {
                dropping.extend(dsl.iter().filter(|s| is_row_dropping(&s.op)).map(|s| s.op.clone()));
            }
        }
        current = vec![format!("{id}.rows_out")];
    }

    tasks.insert(
        "load".into(),
        PipelineTask {
            component: add(&tools.loader),
            inputs: BTreeMap::from([
                ("rows_in".into(), Binding::Upstream(current)),
                ("target".into(), Binding::Param("target".into())),
            ]),
            depends_on: Vec::new(),
        },
    );
    tasks.insert(
        "validate".into(),
        PipelineTask {
            component: add(&tools.validator),
            inputs: BTreeMap::from([
                ("extracted".into(), Binding::Upstream(extract_refs)),
                ("loaded".into(), Binding::upstream(["load.rows_loaded"])),
                (
                    "row_dropping".into(),
                    Binding::Literal(dropping.into_iter().collect::<Vec<_>>().join(",")),
                ),
            ]),
            depends_on: Vec::new(),
        },
    );

    Ok(PipelineSpec {
        ir_version: IR_VERSION,
        name: slug(&format!("{}-{}", destination.kind.as_str(), destination.name)),
        parameters: BTreeMap::from([("target".into(), destination.write_path())]),
        components,
        tasks,
        metadata: PipelineMetadata {
            created_at,
            session_id: session_id.to_string(),
            provenance,
            safety: None,
        },
    })
}
