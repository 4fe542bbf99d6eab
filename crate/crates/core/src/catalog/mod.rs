//! Tool catalog: curated tools, retrieval over them, and a per-session
//! overlay of synthesized tools.

mod synthesis;

use std::collections::BTreeMap;
use std::path::{Component, Path};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synthesis::{coverage, substitute, synthesize_tool, SynthesisError, ToolNeed, DEFAULT_SYNTHESIS_THRESHOLD};

use crate::intent::TransformStep;
use crate::pipeline::SemType;
use crate::retrieval::{rank_top_k, TfIdfIndex};

const CURATED_CATALOG: &str = include_str!("../../data/catalog.yaml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    ReadOnly,
    /// Writes confined to store-relative paths under the prefix.
    ScopedWrite(String),
    Unrestricted,
}

impl Capability {
    /// Whether a tool with this capability may write `path`. Scoped writes
    /// reject absolute paths and `..` components.
    pub fn permits_write(&self, path: &str) -> bool {
        match self {
            Capability::ReadOnly => false,
            Capability::Unrestricted => true,
            Capability::ScopedWrite(prefix) => {
                let p = Path::new(path);
                if path.is_empty() || p.is_absolute() {
                    return false;
                }
                if p.components().any(|c| !matches!(c, Component::Normal(_))) {
                    return false;
                }
                let prefix = prefix.trim_start_matches("./");
                prefix.is_empty() || path.starts_with(prefix)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Curated,
    Synthesized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolRole {
    Extractor,
    Transform,
    Loader,
    Validator,
}

/// How a component runs: a built-in routine or a fixed chain of DSL steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implementation {
    Builtin(String),
    Dsl(Vec<TransformStep>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolInterface {
    #[serde(default)]
    pub inputs: BTreeMap<String, SemType>,
    #[serde(default)]
    pub outputs: BTreeMap<String, SemType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub role: ToolRole,
    /// Source kinds, destination kinds or transform ops the tool serves.
    #[serde(default)]
    pub handles: Vec<String>,
    pub interface: ToolInterface,
    #[serde(default)]
    pub constraints: String,
    #[serde(with = "serde_yaml::with::singleton_map")]
    pub capability: Capability,
    pub origin: Origin,
    #[serde(with = "serde_yaml::with::singleton_map")]
    pub implementation: Implementation,
}

impl ToolSpec {
    /// Text indexed for retrieval.
    pub fn document(&self) -> String {
        format!("{} {}", self.description, self.tags.join(" "))
    }

    pub fn serves(&self, role: ToolRole, handle: &str) -> bool {
        self.role == role && self.handles.iter().any(|h| h == handle)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("catalog document {index}: {message}")]
    Parse { index: usize, message: String },
    #[error("duplicate tool id `{0}`")]
    DuplicateId(String),
    #[error("synthesized tool `{0}` may not be unrestricted")]
    UnrestrictedSynthesized(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalQuery {
    pub text: String,
    pub k: usize,
}

impl RetrievalQuery {
    pub fn new(text: impl Into<String>, k: usize) -> Self {
        Self {
            text: text.into(),
            k: k.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTool {
    pub tool: ToolSpec,
    pub score: f64,
}

/// Curated tools plus a session overlay of synthesized ones. The overlay has
/// a single writer; readers work on cloned snapshots.
#[derive(Debug)]
pub struct Catalog {
    curated: Arc<Vec<ToolSpec>>,
    overlay: RwLock<Arc<Vec<ToolSpec>>>,
}

impl Clone for Catalog {
    fn clone(&self) -> Self {
        Self {
            curated: Arc::clone(&self.curated),
            overlay: RwLock::new(self.overlay.read().unwrap().clone()),
        }
    }
}

pub(crate) fn parse_tool_documents(text: &str) -> Result<Vec<ToolSpec>, CatalogError> {
    let mut tools = Vec::new();
    for (index, doc) in serde_yaml::Deserializer::from_str(text).enumerate() {
        let tool = Option::<ToolSpec>::deserialize(doc).map_err(|e| CatalogError::Parse {
            index,
            message: e.to_string(),
        })?;
        tools.extend(tool);
    }
    Ok(tools)
}

fn check_tools(tools: &[ToolSpec]) -> Result<(), CatalogError> {
    for (i, t) in tools.iter().enumerate() {
        if tools[..i].iter().any(|o| o.id == t.id) {
            return Err(CatalogError::DuplicateId(t.id.clone()));
        }
        if t.origin == Origin::Synthesized && t.capability == Capability::Unrestricted {
            return Err(CatalogError::UnrestrictedSynthesized(t.id.clone()));
        }
    }
    Ok(())
}

impl Catalog {
    /// Loads a multi-document YAML catalog, one tool per document.
    pub fn from_yaml(text: &str) -> Result<Self, CatalogError> {
        let tools = parse_tool_documents(text)?;
        check_tools(&tools)?;
        Ok(Self {
            curated: Arc::new(tools),
            overlay: RwLock::new(Arc::new(Vec::new())),
        })
    }

    /// The bundled starter catalog.
    pub fn curated() -> Self {
        Self::from_yaml(CURATED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn empty() -> Self {
        Self::from_yaml("").expect("empty catalog")
    }

    /// Same curated tools with a fresh, empty overlay.
    pub fn session_view(&self) -> Self {
        Self {
            curated: Arc::clone(&self.curated),
            overlay: RwLock::new(Arc::new(Vec::new())),
        }
    }

    pub fn tools(&self) -> Vec<ToolSpec> {
        let overlay = self.overlay.read().unwrap().clone();
        self.curated.iter().chain(overlay.iter()).cloned().collect()
    }

    pub fn synthesized(&self) -> Vec<ToolSpec> {
        self.overlay.read().unwrap().to_vec()
    }

    pub fn len(&self) -> usize {
        self.curated.len() + self.overlay.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<ToolSpec> {
        self.curated
            .iter()
            .find(|t| t.id == id)
            .cloned()
            .or_else(|| self.overlay.read().unwrap().iter().find(|t| t.id == id).cloned())
    }

    /// Adds a synthesized tool to the overlay.
    pub fn register(&self, tool: ToolSpec) -> Result<(), CatalogError> {
        let mut guard = self.overlay.write().unwrap();
        let mut all: Vec<ToolSpec> = self.curated.iter().chain(guard.iter()).cloned().collect();
        all.push(tool.clone());
        check_tools(&all)?;
        let mut next = guard.to_vec();
        next.push(tool);
        *guard = Arc::new(next);
        Ok(())
    }

    /// Overlay as multi-document YAML.
    pub fn overlay_yaml(&self) -> String {
        self.overlay
            .read()
            .unwrap()
            .iter()
            .map(|t| format!("---\n{}", serde_yaml::to_string(t).expect("tool serializes")))
            .collect()
    }

    pub fn load_overlay(&self, text: &str) -> Result<(), CatalogError> {
        for tool in parse_tool_documents(text)? {
            self.register(tool)?;
        }
        Ok(())
    }

    fn index(tools: &[ToolSpec]) -> TfIdfIndex {
        let docs: Vec<String> = tools.iter().map(ToolSpec::document).collect();
        TfIdfIndex::new(&docs)
    }

    /// Cosine similarity of `query` against one tool, IDF over this catalog.
    pub fn score(&self, query: &str, tool_id: &str) -> Option<f64> {
        let tools = self.tools();
        let i = tools.iter().position(|t| t.id == tool_id)?;
        Some(Self::index(&tools).score(query, i))
    }

    /// Top-k tools by score, ties broken by id.
    pub fn retrieve(&self, query: &RetrievalQuery) -> Vec<ScoredTool> {
        let tools = self.tools();
        if tools.is_empty() {
            return Vec::new();
        }
        let scores = crate::retrieval::RelevanceScorer::scores(&Self::index(&tools), &query.text);
        let ids: Vec<&str> = tools.iter().map(|t| t.id.as_str()).collect();
        rank_top_k(&scores, &ids, query.k)
            .into_iter()
            .map(|(i, score)| ScoredTool {
                tool: tools[i].clone(),
                score,
            })
            .collect()
    }

    /// Best-ranked tool that serves `(role, handle)` among the top `k`, with
    /// its score. `None` means the catalog has a gap for this need.
    pub fn select(&self, text: &str, role: ToolRole, handle: &str, k: usize) -> Option<ScoredTool> {
        self.retrieve(&RetrievalQuery::new(text, k))
            .into_iter()
            .find(|s| s.tool.serves(role, handle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curated_catalog_covers_standard_components() {
        let c = Catalog::curated();
        for (role, handle) in [
            (ToolRole::Extractor, "local_dir"),
            (ToolRole::Extractor, "http_url"),
            (ToolRole::Extractor, "dataset_fixture"),
            (ToolRole::Extractor, "git_fixture"),
            (ToolRole::Loader, "object_store_dir"),
            (ToolRole::Loader, "table_store"),
            (ToolRole::Loader, "local_dir"),
            (ToolRole::Validator, "row_count_compare"),
        ] {
            assert!(c.tools().iter().any(|t| t.serves(role, handle)), "{role:?} {handle}");
        }
        for op in ["select", "rename", "filter", "cast", "dedupe", "aggregate"] {
            assert!(c.tools().iter().any(|t| t.serves(ToolRole::Transform, op)), "{op}");
        }
        assert!(c.tools().iter().all(|t| t.origin == Origin::Curated));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let doc = "id: a\ndescription: x\nrole: extractor\ninterface: {}\ncapability: read_only\norigin: curated\nimplementation: {builtin: extract.local_dir}\n";
        let text = format!("---\n{doc}---\n{doc}");
        assert_eq!(Catalog::from_yaml(&text).unwrap_err(), CatalogError::DuplicateId("a".into()));
    }

    #[test]
    fn scoped_write_rules() {
        let cap = Capability::ScopedWrite("sandbox/".into());
        assert!(cap.permits_write("sandbox/out"));
        assert!(!cap.permits_write("prod/out"));
        assert!(!cap.permits_write("sandbox/../prod/out"));
        assert!(!cap.permits_write("/sandbox/out"));
        assert!(!Capability::ReadOnly.permits_write("sandbox/out"));
        assert!(Capability::ScopedWrite(String::new()).permits_write("bucket/data.csv"));
    }

    #[test]
    fn retrieval_k_and_determinism() {
        let c = Catalog::curated();
        let q = RetrievalQuery::new("load csv to object store", 10);
        let a = c.retrieve(&q);
        assert_eq!(a.len(), 10);
        assert_eq!(a, c.retrieve(&q));
        assert_eq!(a[0].tool.id, "load_object_store_dir");
        let all = c.retrieve(&RetrievalQuery::new("x", 1000));
        assert_eq!(all.len(), c.len());
        assert!(Catalog::empty().retrieve(&q).is_empty());
    }

    #[test]
    fn overlay_is_session_scoped() {
        let base = Catalog::curated();
        let session = base.session_view();
        let mut tool = base.get("transform_select").unwrap();
        tool.id = "synth_upper".into();
        tool.origin = Origin::Synthesized;
        session.register(tool.clone()).unwrap();
        assert!(session.get("synth_upper").is_some());
        assert!(base.get("synth_upper").is_none());
        assert!(session.register(tool.clone()).is_err());

        let other = base.session_view();
        other.load_overlay(&session.overlay_yaml()).unwrap();
        assert_eq!(other.synthesized(), vec![tool]);
    }

    #[test]
    fn synthesized_unrestricted_rejected() {
        let c = Catalog::curated();
        let mut tool = c.get("transform_select").unwrap();
        tool.id = "synth_bad".into();
        tool.origin = Origin::Synthesized;
        tool.capability = Capability::Unrestricted;
        assert_eq!(c.register(tool), Err(CatalogError::UnrestrictedSynthesized("synth_bad".into())));
    }
}
