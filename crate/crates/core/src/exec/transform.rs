//! The closed transform DSL.
//!
//! Seven operations: `select`, `rename`, `filter`, `cast`, `dedupe`,
//! `aggregate` and `map`. Synthesized tools compose these; nothing else runs.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{parse_bool, Column, ColumnType, Dataset, Value};
use crate::intent::TransformStep;

pub const DSL_OPS: [&str; 7] = ["select", "rename", "filter", "cast", "dedupe", "aggregate", "map"];

/// Operations that may legitimately change the row count.
pub const ROW_DROPPING_OPS: [&str; 3] = ["filter", "dedupe", "aggregate"];

pub fn is_row_dropping(op: &str) -> bool {
    ROW_DROPPING_OPS.contains(&op)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("unknown transform op `{0}`")]
    UnknownOp(String),
    #[error("invalid parameters for `{op}`: {reason}")]
    InvalidParams { op: String, reason: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("cannot cast row {row} column `{column}` value `{value}` to {to}")]
    CastFailed {
        row: usize,
        column: String,
        value: String,
        to: ColumnType,
    },
    #[error("type error: {0}")]
    Type(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "=", alias = "==", alias = "eq")]
    Eq,
    #[serde(rename = "!=", alias = "≠", alias = "<>", alias = "ne")]
    Ne,
    #[serde(rename = "<", alias = "lt")]
    Lt,
    #[serde(rename = "<=", alias = "≤", alias = "le")]
    Le,
    #[serde(rename = ">", alias = "gt")]
    Gt,
    #[serde(rename = ">=", alias = "≥", alias = "ge")]
    Ge,
    #[serde(rename = "contains")]
    Contains,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFn {
    Count,
    Sum,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measure {
    #[serde(rename = "fn")]
    pub func: AggFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, rename = "as", skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
}

impl Measure {
    pub fn count() -> Self {
        Self {
            func: AggFn::Count,
            column: None,
            alias: None,
        }
    }

    pub fn sum(column: &str) -> Self {
        Self {
            func: AggFn::Sum,
            column: Some(column.to_string()),
            alias: None,
        }
    }

    pub fn avg(column: &str) -> Self {
        Self {
            func: AggFn::Avg,
            column: Some(column.to_string()),
            alias: None,
        }
    }

    pub fn output_name(&self) -> String {
        if let Some(alias) = &self.alias {
            return alias.clone();
        }
        match (&self.func, &self.column) {
            (AggFn::Count, _) => "count".into(),
            (AggFn::Sum, Some(c)) => format!("sum_{c}"),
            (AggFn::Avg, Some(c)) => format!("avg_{c}"),
            (f, None) => format!("{f:?}").to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapFn {
    Upper,
    Lower,
    Trim,
    Abs,
    Round,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformOp {
    Select {
        columns: Vec<String>,
    },
    Rename {
        mapping: BTreeMap<String, String>,
    },
    Filter {
        column: String,
        #[serde(rename = "cmp")]
        comparison: Comparison,
        value: serde_json::Value,
    },
    Cast {
        column: String,
        to: ColumnType,
    },
    Dedupe,
    Aggregate {
        #[serde(default)]
        group_by: Vec<String>,
        measures: Vec<Measure>,
    },
    Map {
        column: String,
        #[serde(rename = "fn")]
        func: MapFn,
        #[serde(default, rename = "as", skip_serializing_if = "Option::is_none")]
        alias: Option<String>,
    },
}

impl TransformOp {
    pub fn from_step(step: &TransformStep) -> Result<Self, TransformError> {
        if !DSL_OPS.contains(&step.op.as_str()) {
            return Err(TransformError::UnknownOp(step.op.clone()));
        }
        let mut obj = serde_json::Map::new();
        obj.insert("op".into(), serde_json::Value::String(step.op.clone()));
        for (k, v) in &step.params {
            if k == "op" {
                return Err(TransformError::InvalidParams {
                    op: step.op.clone(),
                    reason: "`op` is reserved".into(),
                });
            }
            obj.insert(k.clone(), v.clone());
        }
        serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| TransformError::InvalidParams {
            op: step.op.clone(),
            reason: e.to_string(),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransformOp::Select { .. } => "select",
            TransformOp::Rename { .. } => "rename",
            TransformOp::Filter { .. } => "filter",
            TransformOp::Cast { .. } => "cast",
            TransformOp::Dedupe => "dedupe",
            TransformOp::Aggregate { .. } => "aggregate",
            TransformOp::Map { .. } => "map",
        }
    }
}

fn index_of(d: &Dataset, name: &str) -> Result<usize, TransformError> {
    d.column_index(name).ok_or_else(|| TransformError::UnknownColumn(name.to_string()))
}

fn rebuild(schema: Vec<Column>, rows: Vec<Vec<Value>>, provenance: &str) -> Result<Dataset, TransformError> {
    Dataset::new(schema, rows, provenance).map_err(|e| TransformError::Type(e.to_string()))
}

/// Applies one step to `input`.
pub fn run_transform(step: &TransformStep, input: &Dataset) -> Result<Dataset, TransformError> {
    apply(&TransformOp::from_step(step)?, input)
}

pub fn apply(op: &TransformOp, input: &Dataset) -> Result<Dataset, TransformError> {
    let prov = input.provenance();
    match op {
        TransformOp::Select { columns } => {
            let idx = columns.iter().map(|c| index_of(input, c)).collect::<Result<Vec<_>, _>>()?;
            let schema = idx.iter().map(|&i| input.schema()[i].clone()).collect();
            let rows = input.rows().iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect();
            rebuild(schema, rows, prov)
        }
        TransformOp::Rename { mapping } => {
            for old in mapping.keys() {
                index_of(input, old)?;
            }
            let schema = input
                .schema()
                .iter()
                .map(|c| Column::new(mapping.get(&c.name).cloned().unwrap_or_else(|| c.name.clone()), c.ty))
                .collect();
            rebuild(schema, input.rows().to_vec(), prov)
        }
        TransformOp::Filter {
            column,
            comparison,
            value,
        } => {
            let i = index_of(input, column)?;
            let ty = input.schema()[i].ty;
            let literal = coerce_literal(value, ty, *comparison)?;
            let rows = input
                .rows()
                .iter()
                .filter(|r| matches(&r[i], *comparison, &literal))
                .cloned()
                .collect();
            rebuild(input.schema().to_vec(), rows, prov)
        }
        TransformOp::Cast { column, to } => {
            let i = index_of(input, column)?;
            let mut rows = input.rows().to_vec();
            for (r, row) in rows.iter_mut().enumerate() {
                row[i] = cast_value(&row[i], *to).ok_or_else(|| TransformError::CastFailed {
                    row: r,
                    column: column.clone(),
                    value: row[i].to_cell(),
                    to: *to,
                })?;
            }
            let mut schema = input.schema().to_vec();
            schema[i].ty = *to;
            rebuild(schema, rows, prov)
        }
        TransformOp::Dedupe => {
            let mut seen = HashSet::new();
            let rows = input
                .rows()
                .iter()
                .filter(|r| {
                    let mut key = String::new();
                    r.iter().for_each(|v| v.identity_key(&mut key));
                    seen.insert(key)
                })
                .cloned()
                .collect();
            rebuild(input.schema().to_vec(), rows, prov)
        }
        TransformOp::Aggregate { group_by, measures } => aggregate(input, group_by, measures),
        TransformOp::Map { column, func, alias } => {
            let i = index_of(input, column)?;
            let ty = input.schema()[i].ty;
            let ok = match func {
                MapFn::Upper | MapFn::Lower | MapFn::Trim => ty == ColumnType::String,
                MapFn::Abs | MapFn::Round => ty.is_numeric(),
            };
            if !ok {
                return Err(TransformError::Type(format!("cannot apply {func:?} to {ty} column `{column}`")));
            }
            let mapped = |v: &Value| match (v, func) {
                (Value::Str(s), MapFn::Upper) => Value::Str(s.to_uppercase()),
                (Value::Str(s), MapFn::Lower) => Value::Str(s.to_lowercase()),
                (Value::Str(s), MapFn::Trim) => Value::Str(s.trim().to_string()),
                (Value::Int(n), MapFn::Abs) => Value::Int(n.wrapping_abs()),
                (Value::Float(f), MapFn::Abs) => Value::Float(f.abs()),
                (Value::Float(f), MapFn::Round) => Value::Float(f.round()),
                (other, _) => other.clone(),
            };
            let mut schema = input.schema().to_vec();
            let rows: Vec<Vec<Value>> = match alias {
                Some(name) if name != column => {
                    if input.column_index(name).is_some() {
                        return Err(TransformError::InvalidParams {
                            op: "map".into(),
                            reason: format!("column `{name}` already exists"),
                        });
                    }
                    schema.push(Column::new(name.clone(), ty));
                    input
                        .rows()
                        .iter()
                        .map(|r| {
                            let mut r = r.clone();
                            let v = mapped(&r[i]);
                            r.push(v);
                            r
                        })
                        .collect()
                }
                _ => input
                    .rows()
                    .iter()
                    .map(|r| {
                        let mut r = r.clone();
                        r[i] = mapped(&r[i]);
                        r
                    })
                    .collect(),
            };
            rebuild(schema, rows, prov)
        }
    }
}

fn coerce_literal(value: &serde_json::Value, ty: ColumnType, cmp: Comparison) -> Result<Value, TransformError> {
    let bad = || TransformError::InvalidParams {
        op: "filter".into(),
        reason: format!("literal {value} does not fit a {ty} column"),
    };
    if cmp == Comparison::Contains {
        return match (ty, value) {
            (ColumnType::String, serde_json::Value::String(s)) => Ok(Value::Str(s.clone())),
            _ => Err(TransformError::InvalidParams {
                op: "filter".into(),
                reason: "`contains` needs a string column and string literal".into(),
            }),
        };
    }
    match (ty, value) {
        (ColumnType::String, serde_json::Value::String(s)) => Ok(Value::Str(s.clone())),
        (ColumnType::String, other) => Ok(Value::Str(other.to_string())),
        (ColumnType::Int, serde_json::Value::Number(n)) => n.as_i64().map(Value::Int).ok_or_else(bad),
        (ColumnType::Int, serde_json::Value::String(s)) => s.trim().parse().map(Value::Int).map_err(|_| bad()),
        (ColumnType::Float, serde_json::Value::Number(n)) => n.as_f64().map(Value::Float).ok_or_else(bad),
        (ColumnType::Float, serde_json::Value::String(s)) => s.trim().parse().map(Value::Float).map_err(|_| bad()),
        (ColumnType::Bool, serde_json::Value::Bool(b)) => Ok(Value::Bool(*b)),
        (ColumnType::Bool, serde_json::Value::String(s)) => parse_bool(s.trim()).map(Value::Bool).ok_or_else(bad),
        _ => Err(bad()),
    }
}

fn matches(cell: &Value, cmp: Comparison, literal: &Value) -> bool {
    use std::cmp::Ordering::*;
    if matches!(cell, Value::Null) {
        return false;
    }
    if cmp == Comparison::Contains {
        return match (cell, literal) {
            (Value::Str(c), Value::Str(l)) => c.contains(l.as_str()),
            _ => false,
        };
    }
    let ord = match (cell, literal) {
        (Value::Float(a), Value::Float(b)) => match a.partial_cmp(b) {
            Some(o) => o,
            None => return cmp == Comparison::Ne,
        },
        (a, b) => a.total_cmp(b),
    };
    match cmp {
        Comparison::Eq => ord == Equal,
        Comparison::Ne => ord != Equal,
        Comparison::Lt => ord == Less,
        Comparison::Le => ord != Greater,
        Comparison::Gt => ord == Greater,
        Comparison::Ge => ord != Less,
        Comparison::Contains => unreachable!(),
    }
}

fn cast_value(v: &Value, to: ColumnType) -> Option<Value> {
    Some(match (v, to) {
        (Value::Null, _) => Value::Null,
        (v, ColumnType::String) => Value::Str(v.to_cell()),
        (Value::Str(s), ColumnType::Int) => Value::Int(s.trim().parse().ok()?),
        (Value::Str(s), ColumnType::Float) => Value::Float(s.trim().parse().ok()?),
        (Value::Str(s), ColumnType::Bool) => Value::Bool(parse_bool(s.trim())?),
        (Value::Int(i), ColumnType::Int) => Value::Int(*i),
        (Value::Int(i), ColumnType::Float) => Value::Float(*i as f64),
        (Value::Int(i), ColumnType::Bool) => match i {
            0 => Value::Bool(false),
            1 => Value::Bool(true),
            _ => return None,
        },
        (Value::Float(f), ColumnType::Float) => Value::Float(*f),
        (Value::Float(f), ColumnType::Int) => {
            if f.fract() == 0.0 && f.abs() < 9.0e15 {
                Value::Int(*f as i64)
            } else {
                return None;
            }
        }
        (Value::Bool(b), ColumnType::Bool) => Value::Bool(*b),
        (Value::Bool(b), ColumnType::Int) => Value::Int(i64::from(*b)),
        (Value::Float(_), ColumnType::Bool) | (Value::Bool(_), ColumnType::Float) => return None,
    })
}

/// Groups by `group_by` (output sorted by key) and computes `measures`.
/// An empty `group_by` yields exactly one row.
pub fn aggregate(input: &Dataset, group_by: &[String], measures: &[Measure]) -> Result<Dataset, TransformError> {
    if measures.is_empty() {
        return Err(TransformError::InvalidParams {
            op: "aggregate".into(),
            reason: "at least one measure is required".into(),
        });
    }
    let keys = group_by.iter().map(|c| index_of(input, c)).collect::<Result<Vec<_>, _>>()?;
    let mut schema: Vec<Column> = keys.iter().map(|&i| input.schema()[i].clone()).collect();
    let mut measure_cols = Vec::new();
    for m in measures {
        let (col, ty) = match (m.func, &m.column) {
            (AggFn::Count, _) => (None, ColumnType::Int),
            (f, Some(c)) => {
                let i = index_of(input, c)?;
                let cty = input.schema()[i].ty;
                if !cty.is_numeric() {
                    return Err(TransformError::Type(format!("{f:?} needs a numeric column, `{c}` is {cty}")));
                }
                let out = if f == AggFn::Sum && cty == ColumnType::Int {
                    ColumnType::Int
                } else {
                    ColumnType::Float
                };
                (Some(i), out)
            }
            (f, None) => {
                return Err(TransformError::InvalidParams {
                    op: "aggregate".into(),
                    reason: format!("{f:?} needs a column"),
                })
            }
        };
        let name = m.output_name();
        if schema.iter().any(|c| c.name == name) {
            return Err(TransformError::InvalidParams {
                op: "aggregate".into(),
                reason: format!("duplicate output column `{name}`"),
            });
        }
        schema.push(Column::new(name, ty));
        measure_cols.push((m.func, col, ty));
    }

    let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
    if keys.is_empty() {
        groups.push((Vec::new(), (0..input.row_count()).collect()));
    } else {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for (r, row) in input.rows().iter().enumerate() {
            let key_vals: Vec<Value> = keys.iter().map(|&i| row[i].clone()).collect();
            let mut key = String::new();
            key_vals.iter().for_each(|v| v.identity_key(&mut key));
            let g = *index.entry(key).or_insert_with(|| {
                groups.push((key_vals, Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(r);
        }
        groups.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }

    let mut rows = Vec::with_capacity(groups.len());
    for (key_vals, members) in groups {
        let mut row = key_vals;
        for &(func, col, ty) in &measure_cols {
            let cells = || members.iter().map(|&r| &input.rows()[r][col.unwrap()]).filter(|v| !matches!(v, Value::Null));
            row.push(match func {
                AggFn::Count => Value::Int(members.len() as i64),
                AggFn::Sum if ty == ColumnType::Int => {
                    let mut total: i64 = 0;
                    for v in cells() {
                        if let Value::Int(i) = v {
                            total = total
                                .checked_add(*i)
                                .ok_or_else(|| TransformError::Type("integer overflow in sum".into()))?;
                        }
                    }
                    Value::Int(total)
                }
                AggFn::Sum => Value::Float(cells().filter_map(Value::as_f64).sum()),
                AggFn::Avg => {
                    let vals: Vec<f64> = cells().filter_map(Value::as_f64).collect();
                    if vals.is_empty() {
                        Value::Null
                    } else {
                        Value::Float(vals.iter().sum::<f64>() / vals.len() as f64)
                    }
                }
            });
        }
        rows.push(row);
    }
    rebuild(schema, rows, input.provenance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ab() -> Dataset {
        Dataset::new(
            vec![Column::new("a", ColumnType::Int), Column::new("b", ColumnType::String)],
            (1..=10).map(|i| vec![Value::Int(i), Value::Str(format!("r{}", i % 3))]).collect(),
            "fixture",
        )
        .unwrap()
    }

    #[test]
    fn select_keeps_order_and_rows() {
        let out = run_transform(&TransformStep::new("select").with_param("columns", json!(["a"])), &ab()).unwrap();
        assert_eq!(out.schema(), &[Column::new("a", ColumnType::Int)]);
        assert_eq!(out.row_count(), 10);
    }

    #[test]
    fn filter_matches_brute_force() {
        let input = ab();
        for (cmp, lit) in [(">", 5), ("<=", 3), ("=", 7), ("!=", 7), (">=", 11)] {
            let step = TransformStep::new("filter")
                .with_param("column", "a")
                .with_param("cmp", cmp)
                .with_param("value", lit);
            let out = run_transform(&step, &input).unwrap();
            let expected = (1..=10)
                .filter(|&a: &i64| match cmp {
                    ">" => a > lit,
                    "<=" => a <= lit,
                    "=" => a == lit,
                    "!=" => a != lit,
                    ">=" => a >= lit,
                    _ => unreachable!(),
                })
                .count();
            assert_eq!(out.row_count(), expected, "{cmp} {lit}");
        }
    }

    #[test]
    fn filter_contains_and_unknown_column() {
        let step = TransformStep::new("filter")
            .with_param("column", "b")
            .with_param("cmp", "contains")
            .with_param("value", "1");
        assert_eq!(run_transform(&step, &ab()).unwrap().row_count(), 4);
        let bad = TransformStep::new("filter")
            .with_param("column", "zz")
            .with_param("cmp", "=")
            .with_param("value", 1);
        assert_eq!(run_transform(&bad, &ab()), Err(TransformError::UnknownColumn("zz".into())));
    }

    #[test]
    fn cast_reports_row_index() {
        let d = Dataset::new(
            vec![Column::new("v", ColumnType::String)],
            vec![vec![Value::Str("1".into())], vec![Value::Str("x".into())]],
            "t",
        )
        .unwrap();
        let step = TransformStep::new("cast").with_param("column", "v").with_param("to", "int");
        match run_transform(&step, &d) {
            Err(TransformError::CastFailed { row, .. }) => assert_eq!(row, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dedupe_keeps_first() {
        let mut rows: Vec<Vec<Value>> = (0..100).map(|i| vec![Value::Int(i)]).collect();
        rows.push(vec![Value::Int(5)]);
        let d = Dataset::new(vec![Column::new("v", ColumnType::Int)], rows, "t").unwrap();
        let out = run_transform(&TransformStep::new("dedupe"), &d).unwrap();
        assert_eq!(out.row_count(), 100);
        assert_eq!(out.rows()[5], vec![Value::Int(5)]);
    }

    #[test]
    fn aggregate_without_groups_is_one_row() {
        let step = TransformStep::new("aggregate").with_param("measures", json!([{"fn": "count"}]));
        let out = run_transform(&step, &ab()).unwrap();
        assert_eq!(out.rows(), &[vec![Value::Int(10)]]);
    }

    #[test]
    fn aggregate_groups_sorted() {
        let step = TransformStep::new("aggregate")
            .with_param("group_by", json!(["b"]))
            .with_param("measures", json!([{"fn": "count"}, {"fn": "sum", "column": "a"}, {"fn": "avg", "column": "a"}]));
        let out = run_transform(&step, &ab()).unwrap();
        let names: Vec<&str> = out.schema().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["b", "count", "sum_a", "avg_a"]);
        // r0: 3,6,9  r1: 1,4,7,10  r2: 2,5,8
        assert_eq!(out.rows()[0], vec![Value::Str("r0".into()), Value::Int(3), Value::Int(18), Value::Float(6.0)]);
        assert_eq!(out.rows()[1][1], Value::Int(4));
        assert_eq!(out.rows()[2][2], Value::Int(15));
    }

    #[test]
    fn map_upper_in_place_and_alias() {
        let step = TransformStep::new("map").with_param("column", "b").with_param("fn", "upper");
        let out = run_transform(&step, &ab()).unwrap();
        assert_eq!(out.rows()[0][1], Value::Str("R1".into()));
        let step = step.with_param("as", "b_up");
        let out = run_transform(&step, &ab()).unwrap();
        assert_eq!(out.schema().len(), 3);
        assert_eq!(out.rows()[0][1], Value::Str("r1".into()));
    }

    #[test]
    fn unknown_op_and_params() {
        assert_eq!(
            run_transform(&TransformStep::new("shell"), &ab()),
            Err(TransformError::UnknownOp("shell".into()))
        );
        let step = TransformStep::new("select").with_param("cols", json!(["a"]));
        assert!(matches!(run_transform(&step, &ab()), Err(TransformError::InvalidParams { .. })));
    }
}
