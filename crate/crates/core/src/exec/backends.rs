//! Local stand-ins for the stores pipelines read from and write to.

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use super::dataset::{Column, Dataset};
use super::ExecError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backends {
    /// Source snapshots: plain directories, `git/<owner>/<repo>`,
    /// `datasets/<name>`.
    pub fixtures_root: PathBuf,
    pub object_store_root: PathBuf,
    pub table_store_root: PathBuf,
    pub local_root: PathBuf,
    /// HTTP extraction is disabled unless set; only URLs under it are fetched.
    pub http_base: Option<String>,
}

impl Backends {
    /// Fixtures read from `fixtures`; stores laid out under `output`.
    pub fn new(fixtures: impl Into<PathBuf>, output: impl AsRef<Path>) -> Self {
        let output = output.as_ref();
        Self {
            fixtures_root: fixtures.into(),
            object_store_root: output.join("object_store"),
            table_store_root: output.join("table_store"),
            local_root: output.join("local"),
            http_base: None,
        }
    }

    pub fn with_http_base(mut self, base: impl Into<String>) -> Self {
        self.http_base = Some(base.into());
        self
    }

    fn fixture_path(&self, relative: &str) -> Result<PathBuf, ExecError> {
        let p = Path::new(relative);
        if p.is_absolute() {
            return Ok(p.to_path_buf());
        }
        if p.components().any(|c| matches!(c, Component::ParentDir)) {
            return Err(ExecError::Io(format!("locator `{relative}` escapes the fixtures root")));
        }
        Ok(self.fixtures_root.join(p))
    }

    pub fn extract(&self, kind: &str, locator: &str) -> Result<Dataset, ExecError> {
        match kind {
            "local_dir" => read_tree(&self.fixture_path(locator)?, locator),
            "git_fixture" => {
                let repo = locator
                    .trim_start_matches("https://")
                    .trim_start_matches("http://")
                    .trim_start_matches("github.com/")
                    .trim_end_matches('/')
                    .trim_end_matches(".git");
                read_tree(&self.fixture_path(&format!("git/{repo}"))?, locator)
            }
            "dataset_fixture" => {
                let name = locator
                    .trim_start_matches("hf://")
                    .trim_start_matches("https://huggingface.co/datasets/")
                    .trim_start_matches("datasets/");
                read_tree(&self.fixture_path(&format!("datasets/{name}"))?, locator)
            }
            "http_url" => self.fetch(locator),
            other => Err(ExecError::Io(format!("unknown source kind `{other}`"))),
        }
    }

    fn fetch(&self, url: &str) -> Result<Dataset, ExecError> {
        let Some(base) = &self.http_base else {
            return Err(ExecError::Io("HTTP extraction is disabled; no base URL configured".into()));
        };
        if !url.starts_with(base.as_str()) {
            return Err(ExecError::Io(format!("`{url}` is outside the configured base URL")));
        }
        let body = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(30))
            .build()
            .get(url)
            .call()
            .map_err(|e| ExecError::Io(format!("GET {url}: {e}")))?
            .into_string()
            .map_err(|e| ExecError::Io(format!("GET {url}: {e}")))?;
        if url.ends_with(".jsonl") {
            Dataset::from_jsonl(&body, url)
        } else {
            Dataset::from_csv(&body, None, url)
        }
    }

    /// Writes `data` and returns the number of rows read back.
    pub fn load(&self, kind: &str, target: &str, data: &Dataset) -> Result<u64, ExecError> {
        check_relative(target)?;
        match kind {
            "object_store_dir" => {
                let path = self.object_store_root.join(target);
                let text = if target.ends_with(".jsonl") { data.to_jsonl() } else { data.to_csv() };
                write(&path, &text)?;
                Ok(Dataset::read_file(&path, target)?.row_count() as u64)
            }
            "table_store" => {
                let path = self.table_store_root.join(format!("{target}.csv"));
                let schema = serde_json::to_string_pretty(data.schema()).expect("schema serializes");
                write(&path.with_extension("schema.json"), &schema)?;
                write(&path, &data.to_csv())?;
                Ok(self.read_table(target)?.row_count() as u64)
            }
            "local_dir" => {
                let path = self.local_root.join(format!("{target}.csv"));
                write(&path, &data.to_csv())?;
                Ok(Dataset::read_file(&path, target)?.row_count() as u64)
            }
            other => Err(ExecError::Io(format!("unknown destination kind `{other}`"))),
        }
    }

    /// Reads a table written by [`Backends::load`] with its stored schema.
    pub fn read_table(&self, name: &str) -> Result<Dataset, ExecError> {
        let path = self.table_store_root.join(format!("{name}.csv"));
        let schema_text = fs::read_to_string(path.with_extension("schema.json"))
            .map_err(|e| ExecError::Io(format!("{}: {e}", path.display())))?;
        let schema: Vec<Column> = serde_json::from_str(&schema_text).map_err(|e| ExecError::Schema(e.to_string()))?;
        let text = fs::read_to_string(&path).map_err(|e| ExecError::Io(format!("{}: {e}", path.display())))?;
        Dataset::from_csv(&text, Some(&schema), name)
    }

    /// Reads back what [`Backends::load`] wrote to `kind` at `target`.
    pub fn read_destination(&self, kind: &str, target: &str) -> Result<Dataset, ExecError> {
        if kind == "table_store" {
            return self.read_table(target);
        }
        let path = self
            .output_path(kind, target)
            .ok_or_else(|| ExecError::Io(format!("unknown destination kind `{kind}`")))?;
        Dataset::read_file(&path, target)
    }

    /// Path a destination of `kind` with write path `target` ends up at.
    pub fn output_path(&self, kind: &str, target: &str) -> Option<PathBuf> {
        match kind {
            "object_store_dir" => Some(self.object_store_root.join(target)),
            "table_store" => Some(self.table_store_root.join(format!("{target}.csv"))),
            "local_dir" => Some(self.local_root.join(format!("{target}.csv"))),
            _ => None,
        }
    }
}

fn check_relative(target: &str) -> Result<(), ExecError> {
    let p = Path::new(target);
    if target.is_empty() || p.is_absolute() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(ExecError::Io(format!("write target `{target}` must be a plain relative path")));
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), ExecError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ExecError::Io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| ExecError::Io(format!("{}: {e}", path.display())))
}

/// A file, or every `*.csv` / `*.jsonl` below a directory in path order.
fn read_tree(path: &Path, provenance: &str) -> Result<Dataset, ExecError> {
    if path.is_file() {
        return Dataset::read_file(path, provenance);
    }
    if !path.is_dir() {
        return Err(ExecError::Io(format!("{}: no such file or directory", path.display())));
    }
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(ExecError::Io(format!("{}: no csv or jsonl files", path.display())));
    }
    let parts = files
        .iter()
        .map(|f| Dataset::read_file(f, provenance))
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::concat(parts, provenance)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ExecError> {
    let entries = fs::read_dir(dir).map_err(|e| ExecError::Io(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| ExecError::Io(e.to_string()))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "jsonl")) {
            out.push(path);
        }
    }
    Ok(())
}
