//! Portable pipeline IR: components and the tasks that bind them.
//!
//! A [`PipelineSpec`] serializes to a canonical YAML document whose first key
//! is `ir_version`. Equal specs produce equal bytes.

mod build;
mod compile;
mod ir;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use build::{build, BuildError, SelectedTools};
pub use compile::{validate_compile, CompileFinding, CompileReport, ComponentStatus, FindingLevel};
pub use ir::{parse, serialize, ParseError};

use crate::catalog::{Implementation, Origin};
use crate::safety::VerdictStatus;

pub const IR_VERSION: u32 = 1;

/// Semantic type of a component input or output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemType {
    String,
    Json,
    Dataset,
    Count,
    Audit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub tool_ref: String,
    #[serde(with = "serde_yaml::with::singleton_map")]
    pub implementation: Implementation,
    #[serde(default)]
    pub inputs: BTreeMap<String, SemType>,
    #[serde(default)]
    pub outputs: BTreeMap<String, SemType>,
    /// Opaque body for external runtimes. Never executed locally; always scanned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
}

/// Where a task input comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Literal(String),
    Param(String),
    /// One or more `task.output` references; datasets are concatenated and
    /// counts summed.
    Upstream(Vec<String>),
}

impl Binding {
    pub fn upstream(refs: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Binding::Upstream(refs.into_iter().map(Into::into).collect())
    }
}

/// Splits `task.output`.
pub fn split_ref(reference: &str) -> Option<(&str, &str)> {
    let (task, output) = reference.rsplit_once('.')?;
    (!task.is_empty() && !output.is_empty()).then_some((task, output))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineTask {
    pub component: String,
    #[serde(default, with = "serde_yaml::with::singleton_map_recursive")]
    pub inputs: BTreeMap<String, Binding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
}

impl PipelineTask {
    /// Explicit dependencies plus tasks referenced by upstream bindings.
    pub fn dependencies(&self) -> BTreeSet<String> {
        let mut deps: BTreeSet<String> = self.depends_on.iter().cloned().collect();
        for binding in self.inputs.values() {
            if let Binding::Upstream(refs) = binding {
                deps.extend(refs.iter().filter_map(|r| split_ref(r)).map(|(t, _)| t.to_string()));
            }
        }
        deps
    }
}

/// Approval recorded by the safety stage; the executor checks it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyStamp {
    pub status: VerdictStatus,
    pub approved_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineMetadata {
    pub created_at: DateTime<Utc>,
    pub session_id: String,
    #[serde(default)]
    pub provenance: BTreeMap<String, Origin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetyStamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub ir_version: u32,
    pub name: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
    pub components: BTreeMap<String, ComponentSpec>,
    pub tasks: BTreeMap<String, PipelineTask>,
    pub metadata: PipelineMetadata,
}

impl PipelineSpec {
    /// SHA-256 of the canonical serialization with any safety stamp removed.
    pub fn content_digest(&self) -> String {
        let mut unstamped = self.clone();
        unstamped.metadata.safety = None;
        hex::encode(Sha256::digest(serialize(&unstamped).as_bytes()))
    }

    /// Canonical text without run-specific metadata; the unit compared when
    /// measuring generation variance.
    pub fn body_text(&self) -> String {
        let mut body = self.clone();
        body.metadata = PipelineMetadata {
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            session_id: String::new(),
            provenance: self.metadata.provenance.clone(),
            safety: None,
        };
        serialize(&body)
    }

    /// Short content address used for artifact names.
    pub fn artifact_id(&self) -> String {
        self.content_digest()[..16].to_string()
    }

    pub fn stamp(&mut self, status: VerdictStatus) {
        self.metadata.safety = Some(SafetyStamp {
            status,
            approved_digest: self.content_digest(),
        });
    }

    /// All string values reachable in the pipeline, with their location paths.
    pub fn string_sites(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (name, value) in &self.parameters {
            out.push((format!("parameters.{name}"), value.clone()));
        }
        for (id, c) in &self.components {
            if let Some(script) = &c.script {
                out.push((format!("components.{id}.script"), script.clone()));
            }
            if let Implementation::Dsl(steps) = &c.implementation {
                for (i, step) in steps.iter().enumerate() {
                    for (k, v) in &step.params {
                        collect_json_strings(&format!("components.{id}.implementation.dsl[{i}].{k}"), v, &mut out);
                    }
                }
            }
        }
        for (id, t) in &self.tasks {
            for (input, binding) in &t.inputs {
                if let Binding::Literal(text) = binding {
                    out.push((format!("tasks.{id}.inputs.{input}"), text.clone()));
                }
            }
        }
        out
    }
}

pub(crate) fn collect_json_strings(path: &str, value: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match value {
        serde_json::Value::String(s) => out.push((path.to_string(), s.clone())),
        serde_json::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                collect_json_strings(&format!("{path}[{i}]"), v, out);
            }
        }
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                collect_json_strings(&format!("{path}.{k}"), v, out);
            }
        }
        _ => {}
    }
}
