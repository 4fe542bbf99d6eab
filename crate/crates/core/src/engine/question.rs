use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::{sufficiency, SlotName, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "question", rename_all = "snake_case")]
pub enum QuestionVerdict {
    Accept(String),
    Replace(String),
}

impl QuestionVerdict {
    pub fn text(&self) -> &str {
        match self {
            QuestionVerdict::Accept(q) | QuestionVerdict::Replace(q) => q,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, QuestionVerdict::Accept(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no slot is missing; there is nothing to ask")]
pub struct NothingToAsk;

/// Keyword phrases per slot. The earliest phrase in a question decides which
/// slot it is about; at equal positions the longer phrase wins.
const LEXICON: &[(SlotName, &[&str])] = &[
    (
        SlotName::Sources,
        &[
            "source",
            "come from",
            "comes from",
            "coming from",
            "read from",
            "pull from",
            "extract from",
            "which repository",
            "which dataset",
            "which url",
            "where is the data",
            "where does the data",
            "where is the source",
            "located",
            "input data",
        ],
    ),
    (
        SlotName::Destination,
        &[
            "where",
            "store",
            "stored",
            "storing",
            "save",
            "saved",
            "destination",
            "bucket",
            "load it",
            "load the data",
            "write",
            "written",
            "table should",
            "which table",
            "output",
            "land",
        ],
    ),
    (
        SlotName::Transforms,
        &[
            "transform",
            "transformation",
            "transformations",
            "clean",
            "filter",
            "aggregate",
            "deduplicate",
            "rename",
            "modify",
            "process",
            "before storing",
            "before loading",
        ],
    ),
];

/// Template questions used whenever a proposed question is off target.
pub fn template_question(slot: SlotName) -> &'static str {
    match slot {
        SlotName::Sources => "Where does the data come from? Give a local directory, URL, git repository or dataset name.",
        SlotName::Destination => "Where should the data be stored? Name an object store bucket, a table, or a local directory.",
        SlotName::Transforms => "What transformations should be applied before loading? Answer \"none\" to load the data unchanged.",
        SlotName::Constraints => "Are there any constraints the pipeline must respect?",
    }
}

/// The slot a question asks about, if any keyword matches.
pub fn question_target(question: &str) -> Option<SlotName> {
    let lower = question.to_lowercase();
    let mut best: Option<(usize, usize, SlotName)> = None;
    for (slot, phrases) in LEXICON {
        for phrase in *phrases {
            let Some(pos) = find_word(&lower, phrase) else { continue };
            let better = match best {
                None => true,
                Some((p, len, _)) => pos < p || (pos == p && phrase.len() > len),
            };
            if better {
                best = Some((pos, phrase.len(), *slot));
            }
        }
    }
    best.map(|(_, _, slot)| slot)
}

/// Position of `phrase` in `text` starting at a word boundary.
fn find_word(text: &str, phrase: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(i) = text[from..].find(phrase) {
        let at = from + i;
        let boundary = text[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        if boundary {
            return Some(at);
        }
        from = at + phrase.len();
    }
    None
}

/// Accepts `question` only if it targets a missing slot; otherwise swaps in
/// the template for the highest-priority missing slot.
pub fn vet_question(question: &str, spec: &TaskSpec) -> Result<QuestionVerdict, NothingToAsk> {
    let sufficiency = sufficiency(spec);
    let missing = sufficiency.missing();
    let first = *missing.first().ok_or(NothingToAsk)?;
    let trimmed = question.trim();
    match question_target(trimmed) {
        Some(slot) if missing.contains(&slot) && !trimmed.is_empty() => Ok(QuestionVerdict::Accept(trimmed.to_string())),
        _ => Ok(QuestionVerdict::Replace(template_question(first).to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::{Slot, SourceKind, SourceRef};

    fn with_source() -> TaskSpec {
        TaskSpec {
            sources: Slot::Filled(vec![SourceRef {
                kind: SourceKind::GitFixture,
                locator: "acme/data".into(),
            }]),
            ..TaskSpec::default()
        }
    }

    #[test]
    fn storage_question_accepted_when_destination_missing() {
        let q = "Where should the data from the ELT-Bench GitHub repository be stored?";
        assert_eq!(question_target(q), Some(SlotName::Destination));
        assert!(vet_question(q, &with_source()).unwrap().is_accepted());
    }

    #[test]
    fn off_target_question_replaced_by_priority_template() {
        let mut spec = with_source();
        spec.transforms = Slot::ExplicitNone;
        let q = "What kind of data transformations would you like to perform?";
        assert_eq!(question_target(q), Some(SlotName::Transforms));
        assert_eq!(
            vet_question(q, &spec).unwrap(),
            QuestionVerdict::Replace(template_question(SlotName::Destination).into())
        );
    }

    #[test]
    fn transform_question_before_storing_targets_transforms() {
        let q = "What kind of data transformations would you like to perform on the GitHub repository data before storing it in the S3 bucket?";
        assert_eq!(question_target(q), Some(SlotName::Transforms));
    }

    #[test]
    fn source_phrasing_beats_bare_where() {
        assert_eq!(question_target("Where is the source data located?"), Some(SlotName::Sources));
        assert_eq!(question_target("Hello?"), None);
    }

    #[test]
    fn templates_target_their_own_slot() {
        for slot in SlotName::REQUIRED {
            assert_eq!(question_target(template_question(slot)), Some(slot), "{slot}");
        }
    }

    #[test]
    fn sufficient_spec_has_nothing_to_ask() {
        let mut spec = with_source();
        spec.transforms = Slot::ExplicitNone;
        spec.destination = Slot::Filled(crate::intent::DestinationRef {
            kind: crate::intent::DestinationKind::LocalDir,
            locator: String::new(),
            name: "out".into(),
        });
        assert_eq!(vet_question("Where?", &spec), Err(NothingToAsk));
    }
}
