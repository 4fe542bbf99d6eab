use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    String,
    Int,
    Float,
    Bool,
}

impl ColumnType {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "string" | "str" | "text" => Some(ColumnType::String),
            "int" | "integer" => Some(ColumnType::Int),
            "float" | "double" | "number" => Some(ColumnType::Float),
            "bool" | "boolean" => Some(ColumnType::Bool),
            _ => None,
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Int | ColumnType::Float)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::String => "string",
            ColumnType::Int => "int",
            ColumnType::Float => "float",
            ColumnType::Bool => "bool",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
}

impl Value {
    pub fn conforms(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Value::Null, _)
                | (Value::Str(_), ColumnType::String)
                | (Value::Int(_), ColumnType::Int)
                | (Value::Float(_), ColumnType::Float)
                | (Value::Bool(_), ColumnType::Bool)
        )
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) => 2,
            Value::Float(_) => 3,
            Value::Str(_) => 4,
        }
    }

    /// Total order used for grouping and canonical output.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }

    /// Text form written to CSV cells.
    pub fn to_cell(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Str(s) => s.clone(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format_float(*f),
            Value::Bool(b) => b.to_string(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Str(s) => serde_json::Value::String(s.clone()),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f).map_or(serde_json::Value::Null, serde_json::Value::Number),
            Value::Bool(b) => serde_json::Value::Bool(*b),
        }
    }

    /// Key that distinguishes values exactly, including their type.
    pub(crate) fn identity_key(&self, out: &mut String) {
        match self {
            Value::Null => out.push('N'),
            Value::Str(s) => {
                out.push('S');
                out.push_str(&s.len().to_string());
                out.push(':');
                out.push_str(s);
            }
            Value::Int(i) => {
                out.push('I');
                out.push_str(&i.to_string());
            }
            Value::Float(f) => {
                out.push('F');
                out.push_str(&f.to_bits().to_string());
            }
            Value::Bool(b) => out.push(if *b { 'T' } else { 'B' }),
        }
        out.push('|');
    }
}

/// Shortest round-trip text; integral values keep a trailing `.0`.
pub fn format_float(f: f64) -> String {
    let s = f.to_string();
    if f.is_finite() && !s.contains(['.', 'e', 'E']) {
        format!("{s}.0")
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Self { name: name.into(), ty }
    }
}

/// Immutable table produced by one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<Column>,
    rows: Vec<Vec<Value>>,
    provenance: String,
}

impl Dataset {
    pub fn new(schema: Vec<Column>, rows: Vec<Vec<Value>>, provenance: impl Into<String>) -> Result<Self, ExecError> {
        for (i, c) in schema.iter().enumerate() {
            if schema[..i].iter().any(|o| o.name == c.name) {
                return Err(ExecError::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(ExecError::Schema(format!(
                    "row {r} has {} cells, schema has {} columns",
                    row.len(),
                    schema.len()
                )));
            }
            for (cell, col) in row.iter().zip(&schema) {
                if !cell.conforms(col.ty) {
                    return Err(ExecError::Schema(format!(
                        "row {r} column `{}`: {cell:?} is not {}",
                        col.name, col.ty
                    )));
                }
            }
        }
        Ok(Self {
            schema,
            rows,
            provenance: provenance.into(),
        })
    }

    pub fn empty(schema: Vec<Column>, provenance: impl Into<String>) -> Self {
        Self {
            schema,
            rows: Vec::new(),
            provenance: provenance.into(),
        }
    }

    pub fn schema(&self) -> &[Column] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.iter().find(|c| c.name == name)
    }

    /// Appends datasets with identical column names; int and float columns
    /// unify to float.
    pub fn concat(parts: Vec<Dataset>, provenance: &str) -> Result<Dataset, ExecError> {
        let mut iter = parts.into_iter();
        let Some(first) = iter.next() else {
            return Ok(Dataset::empty(Vec::new(), provenance));
        };
        let rest: Vec<Dataset> = iter.collect();
        if rest.is_empty() {
            return Ok(first.with_provenance(provenance));
        }
        let mut schema = first.schema.clone();
        for part in &rest {
            let names = |s: &[Column]| s.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
            if names(&part.schema) != names(&schema) {
                return Err(ExecError::Schema(format!(
                    "cannot combine columns {:?} with {:?}",
                    names(&schema),
                    names(&part.schema)
                )));
            }
            for (col, other) in schema.iter_mut().zip(&part.schema) {
                col.ty = match (col.ty, other.ty) {
                    (a, b) if a == b => a,
                    (ColumnType::Int, ColumnType::Float) | (ColumnType::Float, ColumnType::Int) => ColumnType::Float,
                    (a, b) => {
                        return Err(ExecError::Schema(format!(
                            "column `{}` is {a} in one input and {b} in another",
                            col.name
                        )))
                    }
                };
            }
        }
        let mut rows = Vec::new();
        for part in std::iter::once(first).chain(rest) {
            for row in part.rows {
                rows.push(
                    row.into_iter()
                        .zip(&schema)
                        .map(|(v, c)| match (v, c.ty) {
                            (Value::Int(i), ColumnType::Float) => Value::Float(i as f64),
                            (v, _) => v,
                        })
                        .collect(),
                );
            }
        }
        Dataset::new(schema, rows, provenance)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.schema.iter().map(|c| c.name.as_str())).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Value::to_cell)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let obj: serde_json::Map<String, serde_json::Value> = self
                .schema
                .iter()
                .zip(row)
                .map(|(c, v)| (c.name.clone(), v.to_json()))
                .collect();
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }

    /// Parses CSV text, inferring column types unless `schema` is given.
    pub fn from_csv(text: &str, schema: Option<&[Column]>, provenance: &str) -> Result<Dataset, ExecError> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| ExecError::Schema(format!("csv header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut raw: Vec<Vec<String>> = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| ExecError::Schema(format!("csv record {}: {e}", i + 1)))?;
            raw.push(rec.iter().map(str::to_string).collect());
        }
        let columns: Vec<Column> = match schema {
            Some(s) => {
                let names: Vec<&str> = s.iter().map(|c| c.name.as_str()).collect();
                if names != headers.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(ExecError::Schema(format!("csv header {headers:?} does not match schema {names:?}")));
                }
                s.to_vec()
            }
            None => headers
                .iter()
                .enumerate()
                .map(|(i, h)| Column::new(h.clone(), infer_type(raw.iter().map(|r| r[i].as_str()))))
                .collect(),
        };
        let mut rows = Vec::with_capacity(raw.len());
        for (r, cells) in raw.into_iter().enumerate() {
            let row = cells
                .iter()
                .zip(&columns)
                .map(|(cell, col)| {
                    parse_cell(cell, col.ty).ok_or_else(|| {
                        ExecError::Schema(format!("row {r} column `{}`: `{cell}` is not {}", col.name, col.ty))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Dataset::new(columns, rows, provenance)
    }

    /// Parses JSON lines; columns are the sorted union of object keys.
    pub fn from_jsonl(text: &str, provenance: &str) -> Result<Dataset, ExecError> {
        let mut objects = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| ExecError::Schema(format!("jsonl line {}: {e}", i + 1)))?;
            match v {
                serde_json::Value::Object(map) => objects.push(map),
                _ => return Err(ExecError::Schema(format!("jsonl line {} is not an object", i + 1))),
            }
        }
        let mut names: Vec<String> = objects.iter().flat_map(|o| o.keys().cloned()).collect();
        names.sort();
        names.dedup();
        let columns: Vec<Column> = names
            .iter()
            .map(|n| {
                let ty = objects.iter().filter_map(|o| o.get(n)).fold(None, |acc, v| json_type(v, acc));
                Column::new(n.clone(), ty.unwrap_or(ColumnType::String))
            })
            .collect();
        let rows = objects
            .iter()
            .map(|o| {
                columns
                    .iter()
                    .map(|c| json_cell(o.get(&c.name).unwrap_or(&serde_json::Value::Null), c.ty))
                    .collect()
            })
            .collect();
        Dataset::new(columns, rows, provenance)
    }

    /// Reads a `.csv` or `.jsonl` file.
    pub fn read_file(path: &Path, provenance: &str) -> Result<Dataset, ExecError> {
        let text = fs::read_to_string(path).map_err(|e| ExecError::Io(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Dataset::from_csv(&text, None, provenance),
            Some("jsonl") | Some("ndjson") => Dataset::from_jsonl(&text, provenance),
            _ => Err(ExecError::Io(format!("{}: unsupported file type", path.display()))),
        }
    }
}

fn infer_type<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> ColumnType {
    let non_empty = || cells.clone().filter(|c| !c.is_empty());
    if non_empty().next().is_none() {
        return ColumnType::String;
    }
    if non_empty().all(|c| c.parse::<i64>().is_ok()) {
        ColumnType::Int
    } else if non_empty().all(|c| c.parse::<f64>().is_ok()) {
        ColumnType::Float
    } else if non_empty().all(|c| parse_bool(c).is_some()) {
        ColumnType::Bool
    } else {
        ColumnType::String
    }
}

pub(crate) fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

pub(crate) fn parse_cell(cell: &str, ty: ColumnType) -> Option<Value> {
    if cell.is_empty() {
        return Some(Value::Null);
    }
    match ty {
        ColumnType::String => Some(Value::Str(cell.to_string())),
        ColumnType::Int => cell.parse().ok().map(Value::Int),
        ColumnType::Float => cell.parse().ok().map(Value::Float),
        ColumnType::Bool => parse_bool(cell).map(Value::Bool),
    }
}

fn json_type(v: &serde_json::Value, acc: Option<ColumnType>) -> Option<ColumnType> {
    let ty = match v {
        serde_json::Value::Null => return acc,
        serde_json::Value::Bool(_) => ColumnType::Bool,
        serde_json::Value::Number(n) if n.is_i64() => ColumnType::Int,
        serde_json::Value::Number(_) => ColumnType::Float,
        _ => ColumnType::String,
    };
    Some(match (acc, ty) {
        (None, t) => t,
        (Some(a), t) if a == t => a,
        (Some(ColumnType::Int), ColumnType::Float) | (Some(ColumnType::Float), ColumnType::Int) => ColumnType::Float,
        _ => ColumnType::String,
    })
}

fn json_cell(v: &serde_json::Value, ty: ColumnType) -> Value {
    match (v, ty) {
        (serde_json::Value::Null, _) => Value::Null,
        (serde_json::Value::Bool(b), ColumnType::Bool) => Value::Bool(*b),
        (serde_json::Value::Number(n), ColumnType::Int) => n.as_i64().map_or(Value::Null, Value::Int),
        (serde_json::Value::Number(n), ColumnType::Float) => n.as_f64().map_or(Value::Null, Value::Float),
        (serde_json::Value::String(s), _) => Value::Str(s.clone()),
        (other, _) => Value::Str(other.to_string()),
    }
}
