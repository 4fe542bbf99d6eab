//! Task intent: the slot-filling target of the clarification dialogue.
//!
//! A [`TaskSpec`] is filled incrementally from [`ParsedUtterance`]s that the
//! provider extracts from user text. Later statements overwrite earlier ones.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    LocalDir,
    HttpUrl,
    GitFixture,
    DatasetFixture,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::LocalDir => "local_dir",
            SourceKind::HttpUrl => "http_url",
            SourceKind::GitFixture => "git_fixture",
            SourceKind::DatasetFixture => "dataset_fixture",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DestinationKind {
    ObjectStoreDir,
    TableStore,
    LocalDir,
}

impl DestinationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DestinationKind::ObjectStoreDir => "object_store_dir",
            DestinationKind::TableStore => "table_store",
            DestinationKind::LocalDir => "local_dir",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceRef {
    pub kind: SourceKind,
    pub locator: String,
}

/// Where the pipeline writes. `name` is the bucket (object store), table
/// (table store) or file stem (local dir); `locator` is the key or
/// sub-directory within it and may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DestinationRef {
    pub kind: DestinationKind,
    #[serde(default)]
    pub locator: String,
    pub name: String,
}

impl DestinationRef {
    /// Store-relative path the loader writes to.
    pub fn write_path(&self) -> String {
        let locator = self.locator.trim_matches('/');
        match self.kind {
            DestinationKind::ObjectStoreDir => {
                let key = if locator.is_empty() { "data.csv" } else { locator };
                format!("{}/{}", self.name, key)
            }
            DestinationKind::TableStore | DestinationKind::LocalDir => {
                if locator.is_empty() {
                    self.name.clone()
                } else {
                    format!("{}/{}", locator, self.name)
                }
            }
        }
    }
}

/// Partial destination statement. Applied over the current destination so a
/// user can revise a single field ("change the name to ...").
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DestinationPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DestinationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformStep {
    pub op: String,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl TransformStep {
    pub fn new(op: impl Into<String>) -> Self {
        Self {
            op: op.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

/// Fill state of a single slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
#[derive(Default)]
pub enum Slot<T> {
    #[default]
    Unfilled,
    Filled(T),
    ExplicitNone,
}


impl<T> Slot<T> {
    pub fn is_unfilled(&self) -> bool {
        matches!(self, Slot::Unfilled)
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Slot::Filled(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotName {
    Sources,
    Destination,
    Transforms,
    Constraints,
}

impl SlotName {
    /// Slots that gate sufficiency, in question priority order.
    pub const REQUIRED: [SlotName; 3] = [SlotName::Sources, SlotName::Destination, SlotName::Transforms];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotName::Sources => "sources",
            SlotName::Destination => "destination",
            SlotName::Transforms => "transforms",
            SlotName::Constraints => "constraints",
        }
    }
}

impl fmt::Display for SlotName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub sources: Slot<Vec<SourceRef>>,
    pub destination: Slot<DestinationRef>,
    pub transforms: Slot<Vec<TransformStep>>,
    #[serde(default)]
    pub constraints: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "slot", content = "value", rename_all = "snake_case")]
pub enum SlotAssignment {
    Sources(SlotValue<Vec<SourceRef>>),
    Destination(SlotValue<DestinationPatch>),
    Transforms(SlotValue<Vec<TransformStep>>),
    Constraints(BTreeMap<String, String>),
}

impl SlotAssignment {
    pub fn slot(&self) -> SlotName {
        match self {
            SlotAssignment::Sources(_) => SlotName::Sources,
            SlotAssignment::Destination(_) => SlotName::Destination,
            SlotAssignment::Transforms(_) => SlotName::Transforms,
            SlotAssignment::Constraints(_) => SlotName::Constraints,
        }
    }
}

/// A slot value as stated by the user: either a concrete value or "none".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotValue<T> {
    Value(T),
    None(NoneMarker),
}

/// The literal string `"none"` in provider output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoneMarker {
    #[serde(alias = "None", alias = "NONE")]
    None,
}

/// Slot assignments extracted from one user utterance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParsedUtterance {
    #[serde(default)]
    pub assignments: Vec<SlotAssignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntentError {
    #[error("conflicting assignments for slot `{0}` in one utterance")]
    Ambiguous(SlotName),
}

/// Applies the utterance to `spec`. Revisions replace earlier values; a
/// destination patch merges into the current destination field by field.
pub fn update_slots(spec: &TaskSpec, utterance: &ParsedUtterance) -> Result<TaskSpec, IntentError> {
    check_conflicts(utterance)?;
    let mut next = spec.clone();
    for assignment in &utterance.assignments {
        match assignment {
            SlotAssignment::Sources(SlotValue::Value(sources)) if !sources.is_empty() => {
                next.sources = Slot::Filled(sources.clone());
            }
            SlotAssignment::Sources(SlotValue::Value(_)) => {}
            SlotAssignment::Sources(SlotValue::None(_)) => next.sources = Slot::ExplicitNone,
            SlotAssignment::Destination(SlotValue::Value(patch)) => {
                if let Some(dest) = merge_destination(next.destination.value(), patch) {
                    next.destination = Slot::Filled(dest);
                }
            }
            SlotAssignment::Destination(SlotValue::None(_)) => next.destination = Slot::ExplicitNone,
            SlotAssignment::Transforms(SlotValue::Value(steps)) => {
                next.transforms = if steps.is_empty() {
                    Slot::ExplicitNone
                } else {
                    Slot::Filled(steps.clone())
                };
            }
            SlotAssignment::Transforms(SlotValue::None(_)) => next.transforms = Slot::ExplicitNone,
            SlotAssignment::Constraints(map) => {
                next.constraints.extend(map.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
        }
    }
    Ok(next)
}

fn check_conflicts(utterance: &ParsedUtterance) -> Result<(), IntentError> {
    let mut seen: BTreeMap<SlotName, &SlotAssignment> = BTreeMap::new();
    for assignment in &utterance.assignments {
        let slot = assignment.slot();
        if let Some(prev) = seen.get(&slot) {
            let conflict = match (prev, assignment) {
                (SlotAssignment::Constraints(a), SlotAssignment::Constraints(b)) => {
                    a.iter().any(|(k, v)| b.get(k).is_some_and(|w| w != v))
                }
                (a, b) => *a != b,
            };
            if conflict {
                return Err(IntentError::Ambiguous(slot));
            }
        }
        seen.insert(slot, assignment);
    }
    Ok(())
}

fn merge_destination(current: Option<&DestinationRef>, patch: &DestinationPatch) -> Option<DestinationRef> {
    let kind = patch.kind.or(current.map(|d| d.kind))?;
    let name = patch
        .name
        .clone()
        .or_else(|| current.map(|d| d.name.clone()))
        .filter(|n| !n.trim().is_empty())?;
    let locator = patch
        .locator
        .clone()
        .or_else(|| current.map(|d| d.locator.clone()))
        .unwrap_or_default();
    Some(DestinationRef { kind, locator, name })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", content = "missing", rename_all = "snake_case")]
pub enum Sufficiency {
    Sufficient,
    Missing(Vec<SlotName>),
}

impl Sufficiency {
    pub fn is_sufficient(&self) -> bool {
        matches!(self, Sufficiency::Sufficient)
    }

    pub fn missing(&self) -> &[SlotName] {
        match self {
            Sufficiency::Sufficient => &[],
            Sufficiency::Missing(m) => m,
        }
    }
}

/// Sources and destination must be filled; transforms filled or explicitly none.
pub fn sufficiency(spec: &TaskSpec) -> Sufficiency {
    let mut missing = Vec::new();
    if !matches!(spec.sources, Slot::Filled(_)) {
        missing.push(SlotName::Sources);
    }
    if !matches!(spec.destination, Slot::Filled(_)) {
        missing.push(SlotName::Destination);
    }
    if spec.transforms.is_unfilled() {
        missing.push(SlotName::Transforms);
    }
    if missing.is_empty() {
        Sufficiency::Sufficient
    } else {
        Sufficiency::Missing(missing)
    }
}

impl TaskSpec {
    /// Canonical JSON with sorted keys; the hash input for clustering.
    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("TaskSpec serializes"))
    }

    pub fn transform_steps(&self) -> &[TransformStep] {
        self.transforms.value().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Serializes a JSON value with object keys sorted at every level.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn sort(value: &serde_json::Value) -> serde_json::Value {
        match value {
            serde_json::Value::Object(map) => {
                let sorted: BTreeMap<_, _> = map.iter().map(|(k, v)| (k.clone(), sort(v))).collect();
                serde_json::Value::Object(sorted.into_iter().collect())
            }
            serde_json::Value::Array(items) => serde_json::Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sort(value)).expect("json value serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distilled_summary: Option<String>,
    #[serde(default)]
    folded_turns: usize,
}

/// Turns kept verbatim by distillation.
pub const PROTECTED_TURNS: usize = 4;

fn estimate_chars(chars: usize) -> usize {
    chars.div_ceil(4)
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, role: Role, text: impl Into<String>, timestamp: DateTime<Utc>) {
        self.turns.push(Turn {
            role,
            text: text.into(),
            timestamp,
        });
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn distilled_summary(&self) -> Option<&str> {
        self.distilled_summary.as_deref()
    }

    pub fn last_user_turn(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.role == Role::User)
    }

    /// ceil(chars / 4) over turn texts and the summary.
    pub fn token_estimate(&self) -> usize {
        let chars: usize = self.turns.iter().map(|t| t.text.chars().count()).sum::<usize>()
            + self.distilled_summary.as_ref().map_or(0, |s| s.chars().count());
        estimate_chars(chars)
    }

    /// Index of the first turn that must be kept verbatim.
    fn protected_from(&self) -> usize {
        let tail = self.turns.len().saturating_sub(PROTECTED_TURNS);
        match self.turns.iter().rposition(|t| t.role == Role::User) {
            Some(last_user) => tail.min(last_user),
            None => tail,
        }
    }
}

/// Folds the oldest unprotected turns into a summary of the current task
/// state until the estimate fits `budget` or only protected turns remain.
pub fn distill(transcript: &Transcript, budget: usize, spec: &TaskSpec) -> Transcript {
    assert!(budget > 0, "distillation budget must be positive");
    if transcript.token_estimate() <= budget {
        return transcript.clone();
    }
    let protected_from = transcript.protected_from();
    if protected_from == 0 {
        return transcript.clone();
    }
    let mut fold = 0;
    let mut out = transcript.clone();
    while fold < protected_from {
        fold += 1;
        out = Transcript {
            turns: transcript.turns[fold..].to_vec(),
            distilled_summary: Some(summary_text(spec, transcript.folded_turns + fold)),
            folded_turns: transcript.folded_turns + fold,
        };
        if out.token_estimate() <= budget {
            break;
        }
    }
    out
}

fn summary_text(spec: &TaskSpec, folded: usize) -> String {
    let unresolved: Vec<&str> = sufficiency(spec).missing().iter().map(|s| s.as_str()).collect();
    format!(
        "task_spec={} unresolved=[{}] folded_turns={}",
        spec.canonical_json(),
        unresolved.join(","),
        folded
    )
}
