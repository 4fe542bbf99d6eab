//! Static safety validation of compiled pipelines.
//!
//! Every string reachable in a pipeline is lexed as SQL and as shell and
//! matched against a versioned rule set; capability declarations are
//! checked against each task's write target. A pipeline is only executable
//! with a `Pass` or `Sanitized` verdict.

mod lexer;
mod matchers;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexer::{shell_commands, sql_statements, ShellCommand, ShellWord, SqlStatement, SqlToken};
pub use matchers::{match_text, RawMatch, TEXT_RULES};

use crate::catalog::{Capability, Catalog, Implementation, Origin};
use crate::pipeline::{validate_compile, Binding, PipelineSpec};

const BUNDLED_RULES: &str = include_str!("../../data/rules.yaml");

pub const CAPABILITY_RULES: [&str; 4] = ["cap.scope", "cap.readonly", "cap.unrestricted", "cap.unknown_tool"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Sanitizable,
    Fatal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Sanitized,
    Rejected,
}

impl VerdictStatus {
    pub fn is_executable(self) -> bool {
        matches!(self, VerdictStatus::Pass | VerdictStatus::Sanitized)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    pub category: String,
    pub severity: Severity,
    pub description: String,
    #[serde(default = "enabled")]
    pub enabled: bool,
}

fn enabled() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum RuleSetError {
    #[error("rule set: {0}")]
    Parse(String),
    #[error("unknown rule id `{0}`")]
    UnknownRule(String),
    #[error("duplicate rule id `{0}`")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub version: u32,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn bundled() -> Self {
        Self::from_yaml(BUNDLED_RULES).expect("bundled rule set is valid")
    }

    /// Parses a rule set. Every id must name a known matcher; rules may be
    /// disabled or have their severity changed.
    pub fn from_yaml(text: &str) -> Result<Self, RuleSetError> {
        let set: RuleSet = serde_yaml::from_str(text).map_err(|e| RuleSetError::Parse(e.to_string()))?;
        for (i, rule) in set.rules.iter().enumerate() {
            if !TEXT_RULES.contains(&rule.id.as_str()) && !CAPABILITY_RULES.contains(&rule.id.as_str()) {
                return Err(RuleSetError::UnknownRule(rule.id.clone()));
            }
            if set.rules[..i].iter().any(|r| r.id == rule.id) {
                return Err(RuleSetError::Duplicate(rule.id.clone()));
            }
        }
        Ok(set)
    }

    /// Severity of an enabled rule; `None` if absent or disabled.
    pub fn severity(&self, id: &str) -> Option<Severity> {
        self.rules.iter().find(|r| r.id == id && r.enabled).map(|r| r.severity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub rule: String,
    pub location: String,
    pub matched: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub status: VerdictStatus,
    pub findings: Vec<Finding>,
    /// Digest of the pipeline that was scanned.
    pub subject_digest: String,
    pub ruleset_version: u32,
    /// Rewritten pipeline when `status` is `Sanitized`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sanitized_pipeline: Option<PipelineSpec>,
}

impl SafetyVerdict {
    /// The pipeline that may run: the sanitized rewrite if there is one.
    pub fn approved<'a>(&'a self, original: &'a PipelineSpec) -> Option<&'a PipelineSpec> {
        match self.status {
            VerdictStatus::Pass => Some(original),
            VerdictStatus::Sanitized => self.sanitized_pipeline.as_ref(),
            VerdictStatus::Rejected => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scanner {
    rules: RuleSet,
}

impl Default for Scanner {
    fn default() -> Self {
        Self::new(RuleSet::bundled())
    }
}

/// Scans with the bundled rule set.
pub fn scan(pipeline: &PipelineSpec, catalog: &Catalog) -> SafetyVerdict {
    Scanner::default().scan(pipeline, catalog)
}

/// Findings for one string with the bundled rule set.
pub fn scan_text(location: &str, text: &str) -> Vec<Finding> {
    Scanner::default().scan_text(location, text)
}

impl Scanner {
    pub fn new(rules: RuleSet) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    /// Findings for one string. JSON object or array text is decoded and
    /// each contained string scanned on its own.
    pub fn scan_text(&self, location: &str, text: &str) -> Vec<Finding> {
        if let Some(json) = parse_json_container(text) {
            let mut leaves = Vec::new();
            crate::pipeline::collect_json_strings(location, &json, &mut leaves);
            return leaves.iter().flat_map(|(loc, s)| self.scan_text(loc, s)).collect();
        }
        match_text(text)
            .into_iter()
            .filter_map(|m| {
                self.rules.severity(m.rule).map(|severity| Finding {
                    rule: m.rule.to_string(),
                    location: location.to_string(),
                    matched: m.matched,
                    severity,
                })
            })
            .collect()
    }

    /// Removes statements matched by sanitizable rules. Fatal matches are
    /// left in place; the caller rejects those.
    pub fn sanitize_text(&self, text: &str) -> String {
        if let Some(json) = parse_json_container(text) {
            let mut cleaned = json.clone();
            self.sanitize_json(&mut cleaned);
            if cleaned == json {
                return text.to_string();
            }
            return serde_json::to_string(&cleaned).expect("json serializes");
        }
        let mut spans: Vec<(usize, usize)> = match_text(text)
            .into_iter()
            .filter(|m| self.rules.severity(m.rule) == Some(Severity::Sanitizable))
            .map(|m| (m.start, m.end))
            .collect();
        if spans.is_empty() {
            return text.to_string();
        }
        spans.sort_unstable();
        let mut out = String::new();
        let mut cursor = 0;
        for (start, end) in spans {
            if start >= cursor {
                out.push_str(&text[cursor..start]);
            }
            cursor = cursor.max(end);
        }
        out.push_str(&text[cursor..]);
        out.trim().to_string()
    }

    fn sanitize_json(&self, value: &mut serde_json::Value) {
        match value {
            serde_json::Value::String(s) => *s = self.sanitize_text(s),
            serde_json::Value::Array(items) => items.iter_mut().for_each(|v| self.sanitize_json(v)),
            serde_json::Value::Object(map) => map.values_mut().for_each(|v| self.sanitize_json(v)),
            _ => {}
        }
    }

    /// Capability findings: write targets against each tool's declared
    /// capability, and synthesized tools that claim unrestricted access.
    pub fn enforce_capabilities(&self, pipeline: &PipelineSpec, catalog: &Catalog) -> Vec<Finding> {
        let mut raw = Vec::new();
        for (task_id, task) in &pipeline.tasks {
            let location = format!("tasks.{task_id}");
            let Some(component) = pipeline.components.get(&task.component) else {
                continue;
            };
            let Some(tool) = catalog.get(&component.tool_ref) else {
                raw.push(("cap.unknown_tool", location, component.tool_ref.clone()));
                continue;
            };
            if tool.origin == Origin::Synthesized && tool.capability == Capability::Unrestricted {
                raw.push(("cap.unrestricted", location.clone(), tool.id.clone()));
            }
            let writes = matches!(&component.implementation, Implementation::Builtin(b) if b.starts_with("load."))
                || task.inputs.contains_key("target");
            if !writes {
                continue;
            }
            if tool.capability == Capability::ReadOnly {
                raw.push(("cap.readonly", location, tool.id.clone()));
                continue;
            }
            let target = match task.inputs.get("target") {
                Some(Binding::Literal(t)) => Some(t.clone()),
                Some(Binding::Param(p)) => pipeline.parameters.get(p).cloned(),
                _ => None,
            };
            match target {
                Some(t) if tool.capability.permits_write(&t) => {}
                Some(t) => raw.push(("cap.scope", location, t)),
                None => raw.push(("cap.scope", location, "<dynamic target>".to_string())),
            }
        }
        raw.into_iter()
            .filter_map(|(rule, location, matched)| {
                self.rules.severity(rule).map(|severity| Finding {
                    rule: rule.to_string(),
                    location,
                    matched,
                    severity,
                })
            })
            .collect()
    }

    fn findings(&self, pipeline: &PipelineSpec, catalog: &Catalog) -> Vec<Finding> {
        let mut findings: Vec<Finding> = pipeline
            .string_sites()
            .iter()
            .flat_map(|(loc, text)| self.scan_text(loc, text))
            .collect();
        findings.extend(self.enforce_capabilities(pipeline, catalog));
        findings
    }

    pub fn scan(&self, pipeline: &PipelineSpec, catalog: &Catalog) -> SafetyVerdict {
        let mut findings = self.findings(pipeline, catalog);
        let verdict = |status, findings, sanitized| SafetyVerdict {
            status,
            findings,
            subject_digest: pipeline.content_digest(),
            ruleset_version: self.rules.version,
            sanitized_pipeline: sanitized,
        };
        if findings.is_empty() {
            return verdict(VerdictStatus::Pass, findings, None);
        }
        if findings.iter().any(|f| f.severity == Severity::Fatal) {
            return verdict(VerdictStatus::Rejected, findings, None);
        }

        let (rewritten, emptied) = self.sanitize_pipeline(pipeline);
        for location in emptied {
            findings.push(Finding {
                rule: "sanitize.structural".into(),
                location,
                matched: "value became empty after sanitization".into(),
                severity: Severity::Fatal,
            });
        }
        if validate_compile(pipeline, catalog).pipeline_ok && !validate_compile(&rewritten, catalog).pipeline_ok {
            findings.push(Finding {
                rule: "sanitize.structural".into(),
                location: ".".into(),
                matched: "sanitized pipeline no longer compiles".into(),
                severity: Severity::Fatal,
            });
        }
        for residual in self.findings(&rewritten, catalog) {
            findings.push(Finding {
                severity: Severity::Fatal,
                ..residual
            });
        }
        if findings.iter().any(|f| f.severity == Severity::Fatal) {
            return verdict(VerdictStatus::Rejected, findings, None);
        }
        verdict(VerdictStatus::Sanitized, findings, Some(rewritten))
    }

    /// Applies [`Scanner::sanitize_text`] to every string site. Returns the
    /// rewrite and the locations whose non-empty value became empty.
    pub fn sanitize_pipeline(&self, pipeline: &PipelineSpec) -> (PipelineSpec, Vec<String>) {
        let mut out = pipeline.clone();
        out.metadata.safety = None;
        let mut emptied = Vec::new();
        let mut fix = |location: String, text: &mut String| {
            let cleaned = self.sanitize_text(text);
            if cleaned.trim().is_empty() && !text.trim().is_empty() {
                emptied.push(location);
            }
            *text = cleaned;
        };
        for (name, value) in out.parameters.iter_mut() {
            fix(format!("parameters.{name}"), value);
        }
        for (id, component) in out.components.iter_mut() {
            if let Some(script) = component.script.as_mut() {
                fix(format!("components.{id}.script"), script);
            }
            if let Implementation::Dsl(steps) = &mut component.implementation {
                for step in steps.iter_mut() {
                    for value in step.params.values_mut() {
                        self.sanitize_json(value);
                    }
                }
            }
        }
        for (id, task) in out.tasks.iter_mut() {
            for (input, binding) in task.inputs.iter_mut() {
                if let Binding::Literal(text) = binding {
                    fix(format!("tasks.{id}.inputs.{input}"), text);
                }
            }
        }
        (out, emptied)
    }
}

fn parse_json_container(text: &str) -> Option<serde_json::Value> {
    let trimmed = text.trim_start();
    if !(trimmed.starts_with('{') || trimmed.starts_with('[')) {
        return None;
    }
    serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .filter(|v| v.is_object() || v.is_array())
}

/// Rule hit counts keyed by rule id.
pub fn rule_histogram(findings: &[Finding]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for f in findings {
        *out.entry(f.rule.clone()).or_insert(0) += 1;
    }
    out
}
