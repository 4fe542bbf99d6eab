use thiserror::Error;

use super::{PipelineSpec, IR_VERSION};

const TOP_LEVEL: [&str; 6] = ["ir_version", "name", "parameters", "components", "tasks", "metadata"];
const REQUIRED: [&str; 5] = ["ir_version", "name", "components", "tasks", "metadata"];

/// Schema violation located by a `.`-separated path from the document root.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ParseError {
    pub path: String,
    pub message: String,
}

impl ParseError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Canonical YAML: fixed field order, maps sorted by key.
pub fn serialize(pipeline: &PipelineSpec) -> String {
    serde_yaml::to_string(pipeline).expect("pipeline IR serializes")
}

pub fn parse(doc: &str) -> Result<PipelineSpec, ParseError> {
    let value: serde_yaml::Value = serde_yaml::from_str(doc).map_err(|e| ParseError::at(".", e.to_string()))?;
    let map = value
        .as_mapping()
        .ok_or_else(|| ParseError::at(".", "document must be a mapping"))?;

    match map.iter().next() {
        Some((k, v)) if k.as_str() == Some("ir_version") => {
            if v.as_u64() != Some(u64::from(IR_VERSION)) {
                return Err(ParseError::at(".ir_version", format!("unsupported version, expected {IR_VERSION}")));
            }
        }
        _ => return Err(ParseError::at(".ir_version", "`ir_version` must be the first key")),
    }
    for key in map.keys() {
        let name = key.as_str().ok_or_else(|| ParseError::at(".", "top-level keys must be strings"))?;
        if !TOP_LEVEL.contains(&name) {
            return Err(ParseError::at(format!(".{name}"), "unknown top-level key"));
        }
    }
    for required in REQUIRED {
        if !map.contains_key(required) {
            return Err(ParseError::at(format!(".{required}"), "missing required key"));
        }
    }

    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { path } else { format!(".{path}") };
        ParseError::at(path, e.inner().to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "ir_version: 1\nname: p\ncomponents: {}\ntasks: {}\nmetadata:\n  created_at: 2024-01-01T00:00:00Z\n  session_id: s\n";

    #[test]
    fn minimal_document_parses() {
        let p = parse(MINIMAL).unwrap();
        assert_eq!(p.name, "p");
        assert_eq!(parse(&serialize(&p)).unwrap(), p);
        assert!(serialize(&p).starts_with("ir_version: 1\n"));
    }

    #[test]
    fn missing_tasks_located() {
        let doc = MINIMAL.replace("tasks: {}\n", "");
        assert_eq!(parse(&doc).unwrap_err().path, ".tasks");
    }

    #[test]
    fn unknown_top_level_key() {
        let doc = format!("{MINIMAL}extra: 1\n");
        assert_eq!(parse(&doc).unwrap_err().path, ".extra");
    }

    #[test]
    fn version_must_come_first() {
        let doc = MINIMAL.replace("ir_version: 1\nname: p\n", "name: p\nir_version: 1\n");
        assert_eq!(parse(&doc).unwrap_err().path, ".ir_version");
        let doc = MINIMAL.replace("ir_version: 1", "ir_version: 2");
        assert_eq!(parse(&doc).unwrap_err().path, ".ir_version");
    }

    #[test]
    fn nested_errors_carry_path() {
        let doc = MINIMAL.replace(
            "tasks: {}",
            "tasks:\n  t1:\n    component: c\n    inputs:\n      x: {bogus: 1}",
        );
        let err = parse(&doc).unwrap_err();
        assert!(err.path.starts_with(".tasks.t1.inputs"), "{err}");
    }
}
