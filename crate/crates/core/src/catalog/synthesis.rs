//! Tool synthesis for needs the catalog does not cover.
//!
//! The provider proposes a chain of DSL steps; the candidate is parsed
//! strictly, checked against the safety rules, then registered in the
//! session overlay with a bounded capability.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Capability, Catalog, CatalogError, Implementation, Origin, ToolInterface, ToolRole, ToolSpec};
use crate::exec::transform::{TransformOp, DSL_OPS};
use crate::intent::TransformStep;
use crate::pipeline::SemType;
use crate::provider::{complete_with_retry, Message, Provider, ProviderError, ProviderRequest, RetryPolicy};
use crate::safety::{scan_text, Finding};

pub const DEFAULT_SYNTHESIS_THRESHOLD: f64 = 0.35;

/// Something a pipeline needs: a transform op the user asked for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolNeed {
    pub role: ToolRole,
    pub handle: String,
    /// Retrieval query describing the need.
    pub query: String,
    /// Concrete parameters the tool will be invoked with.
    pub params: BTreeMap<String, serde_json::Value>,
    /// Whether the tool must write; confined to the session sandbox if so.
    pub writes: bool,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("catalog covers the need (score {score:.3} >= threshold {threshold})")]
    NotNeeded { score: f64, threshold: f64 },
    #[error("only transform tools can be synthesized, not {0:?}")]
    Unsupported(ToolRole),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("malformed candidate: {0}")]
    Malformed(String),
    #[error("candidate rejected by safety rules ({} finding(s))", .0.len())]
    Rejected(Vec<Finding>),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// The provider's proposal. Unknown fields are an error.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Candidate {
    id: String,
    description: String,
    #[serde(default)]
    tags: Vec<String>,
    steps: Vec<TransformStep>,
}

/// Best score among tools that serve the need; zero when none does.
pub fn coverage(catalog: &Catalog, need: &ToolNeed) -> f64 {
    catalog
        .tools()
        .iter()
        .filter(|t| t.serves(need.role, &need.handle))
        .filter_map(|t| catalog.score(&need.query, &t.id))
        .fold(0.0, f64::max)
}

/// Replaces `${name}` string values with the matching parameter.
pub fn substitute(steps: &[TransformStep], params: &BTreeMap<String, serde_json::Value>) -> Vec<TransformStep> {
    fn walk(v: &serde_json::Value, params: &BTreeMap<String, serde_json::Value>) -> serde_json::Value {
        match v {
            serde_json::Value::String(s) => s
                .strip_prefix("${")
                .and_then(|r| r.strip_suffix('}'))
                .and_then(|name| params.get(name).cloned())
                .unwrap_or_else(|| v.clone()),
            serde_json::Value::Array(items) => items.iter().map(|i| walk(i, params)).collect(),
            serde_json::Value::Object(map) => map.iter().map(|(k, i)| (k.clone(), walk(i, params))).collect(),
            other => other.clone(),
        }
    }
    steps
        .iter()
        .map(|s| TransformStep {
            op: s.op.clone(),
            params: s.params.iter().map(|(k, v)| (k.clone(), walk(v, params))).collect(),
        })
        .collect()
}

const SYSTEM_PROMPT: &str = "You write data transform tools. Reply with one JSON object \
{\"id\", \"description\", \"tags\", \"steps\"} where steps is a list of {\"op\", \"params\"} \
using only these ops: select, rename, filter, cast, dedupe, aggregate, map. \
String values of the form ${name} are replaced with invocation parameters.";

pub fn synthesize_tool(
    need: &ToolNeed,
    catalog: &Catalog,
    provider: &dyn Provider,
    session_id: &str,
    threshold: f64,
    retry: RetryPolicy,
) -> Result<ToolSpec, SynthesisError> {
    let score = coverage(catalog, need);
    if score >= threshold {
        return Err(SynthesisError::NotNeeded { score, threshold });
    }
    if need.role != ToolRole::Transform {
        return Err(SynthesisError::Unsupported(need.role));
    }

    let request = ProviderRequest::json(
        session_id,
        vec![
            Message::system(SYSTEM_PROMPT),
            Message::user(format!(
                "Need: {}\nOp: {}\nParameters: {}",
                need.query,
                need.handle,
                serde_json::to_string(&need.params).expect("params serialize")
            )),
        ],
    );
    let response = complete_with_retry(provider, &request, retry)?;
    let candidate: Candidate = serde_json::from_str(&response.text).map_err(|e| SynthesisError::Malformed(e.to_string()))?;
    if candidate.steps.is_empty() {
        return Err(SynthesisError::Malformed("no steps".into()));
    }
    for step in &candidate.steps {
        if !DSL_OPS.contains(&step.op.as_str()) {
            return Err(SynthesisError::Malformed(format!("op `{}` is not part of the DSL", step.op)));
        }
    }
    for step in substitute(&candidate.steps, &need.params) {
        TransformOp::from_step(&step).map_err(|e| SynthesisError::Malformed(e.to_string()))?;
    }

    let mut findings = Vec::new();
    let raw = serde_json::to_value(&candidate).expect("candidate serializes");
    let mut strings = Vec::new();
    crate::pipeline::collect_json_strings("candidate", &raw, &mut strings);
    for (location, text) in &strings {
        findings.extend(scan_text(location, text));
    }
    if !findings.is_empty() {
        return Err(SynthesisError::Rejected(findings));
    }

    let id_stem: String = candidate
        .id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    let id_stem = id_stem.trim_start_matches("synth_").trim_matches('_');
    if id_stem.is_empty() {
        return Err(SynthesisError::Malformed("empty id".into()));
    }
    let mut id = format!("synth_{id_stem}");
    let mut n = 2;
    while catalog.get(&id).is_some() {
        id = format!("synth_{id_stem}_{n}");
        n += 1;
    }

    let mut tags = candidate.tags;
    if !tags.iter().any(|t| t == &need.handle) {
        tags.push(need.handle.clone());
    }
    let tool = ToolSpec {
        id,
        description: candidate.description,
        tags,
        role: ToolRole::Transform,
        handles: vec![need.handle.clone()],
        interface: ToolInterface {
            inputs: BTreeMap::from([("rows_in".into(), SemType::Dataset), ("params".into(), SemType::Json)]),
            outputs: BTreeMap::from([("rows_out".into(), SemType::Dataset)]),
        },
        constraints: "Synthesized; runs only closed DSL steps.".into(),
        capability: if need.writes {
            Capability::ScopedWrite(format!("sessions/{session_id}/"))
        } else {
            Capability::ReadOnly
        },
        origin: Origin::Synthesized,
        implementation: Implementation::Dsl(candidate.steps),
    };
    catalog.register(tool.clone())?;
    Ok(tool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ScriptedProvider;

    fn upper_need() -> ToolNeed {
        ToolNeed {
            role: ToolRole::Transform,
            handle: "map".into(),
            query: "transform uppercase the values of a column".into(),
            params: BTreeMap::from([
                ("column".into(), serde_json::json!("name")),
                ("fn".into(), serde_json::json!("upper")),
            ]),
            writes: false,
        }
    }

    fn provider(reply: &str) -> ScriptedProvider {
        ScriptedProvider::new().with_script("s1", [reply])
    }

    const GOOD: &str = r#"{"id": "uppercase column", "description": "Uppercase one column", "tags": ["uppercase"], "steps": [{"op": "map", "params": {"column": "${column}", "fn": "upper"}}]}"#;

    #[test]
    fn gap_is_filled_with_session_tool() {
        let base = Catalog::curated();
        let session = base.session_view();
        let tool = synthesize_tool(&upper_need(), &session, &provider(GOOD), "s1", 0.35, RetryPolicy::immediate(1)).unwrap();
        assert_eq!(tool.id, "synth_uppercase_column");
        assert_eq!(tool.origin, Origin::Synthesized);
        assert_eq!(tool.capability, Capability::ReadOnly);
        assert!(session.get(&tool.id).is_some());
        assert!(base.get(&tool.id).is_none());
    }

    #[test]
    fn covered_need_is_not_synthesized() {
        let need = ToolNeed {
            role: ToolRole::Transform,
            handle: "select".into(),
            query: "select a subset of columns".into(),
            params: BTreeMap::new(),
            writes: false,
        };
        let err = synthesize_tool(&need, &Catalog::curated(), &provider(GOOD), "s1", 0.35, RetryPolicy::immediate(1)).unwrap_err();
        assert!(matches!(err, SynthesisError::NotNeeded { .. }));
    }

    #[test]
    fn unknown_fields_and_ops_are_malformed() {
        let c = Catalog::curated();
        let extra = GOOD.replace("\"tags\"", "\"shell\": \"ls\", \"tags\"");
        let err = synthesize_tool(&upper_need(), &c, &provider(&extra), "s1", 0.35, RetryPolicy::immediate(1)).unwrap_err();
        assert!(matches!(err, SynthesisError::Malformed(_)), "{err}");
        let bad_op = GOOD.replace("\"map\"", "\"exec\"");
        let err = synthesize_tool(&upper_need(), &c, &provider(&bad_op), "s1", 0.35, RetryPolicy::immediate(1)).unwrap_err();
        assert!(matches!(err, SynthesisError::Malformed(_)), "{err}");
    }

    #[test]
    fn destructive_candidate_rejected() {
        let evil = GOOD.replace("Uppercase one column", "Uppercase; rm -rf /srv/data");
        let err = synthesize_tool(&upper_need(), &Catalog::curated(), &provider(&evil), "s1", 0.35, RetryPolicy::immediate(1)).unwrap_err();
        assert!(matches!(err, SynthesisError::Rejected(ref f) if f[0].rule == "shell.rm_recursive"), "{err}");
    }

    #[test]
    fn writing_tools_are_sandboxed() {
        let mut need = upper_need();
        need.writes = true;
        let tool = synthesize_tool(&need, &Catalog::curated().session_view(), &provider(GOOD), "s1", 0.35, RetryPolicy::immediate(1)).unwrap();
        assert_eq!(tool.capability, Capability::ScopedWrite("sessions/s1/".into()));
    }

    #[test]
    fn placeholders_substitute() {
        let steps = vec![TransformStep::new("map").with_param("column", "${column}").with_param("fn", "upper")];
        let out = substitute(&steps, &upper_need().params);
        assert_eq!(out[0].params["column"], serde_json::json!("name"));
    }
}
