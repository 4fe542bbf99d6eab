use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{split_ref, Binding, PipelineSpec, SemType};
use crate::catalog::{substitute, Catalog, Implementation, ToolRole};
use crate::exec::TransformOp;
use crate::intent::TransformStep;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingLevel {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileFinding {
    /// Task the finding is about; `None` for pipeline-level findings.
    pub task: Option<String>,
    pub level: FindingLevel,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentStatus {
    Compiled,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileReport {
    pub tasks: BTreeMap<String, ComponentStatus>,
    pub findings: Vec<CompileFinding>,
    pub pipeline_ok: bool,
}

impl CompileReport {
    /// Share of tasks that compiled, in `[0, 1]`; 1 for an empty pipeline.
    pub fn compiled_fraction(&self) -> f64 {
        if self.tasks.is_empty() {
            return 1.0;
        }
        let ok = self.tasks.values().filter(|s| **s == ComponentStatus::Compiled).count();
        ok as f64 / self.tasks.len() as f64
    }

    pub fn errors(&self) -> impl Iterator<Item = &CompileFinding> {
        self.findings.iter().filter(|f| f.level == FindingLevel::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &CompileFinding> {
        self.findings.iter().filter(|f| f.level == FindingLevel::Warning)
    }
}

fn is_scalar(t: SemType) -> bool {
    matches!(t, SemType::String | SemType::Json)
}

/// Checks every task independently, then the task graph as a whole.
pub fn validate_compile(pipeline: &PipelineSpec, catalog: &Catalog) -> CompileReport {
    let mut findings = Vec::new();
    let mut failed = BTreeSet::new();
    let error = |task: &str, message: String, findings: &mut Vec<CompileFinding>, failed: &mut BTreeSet<String>| {
        failed.insert(task.to_string());
        findings.push(CompileFinding {
            task: Some(task.to_string()),
            level: FindingLevel::Error,
            message,
        });
    };

    for (id, task) in &pipeline.tasks {
        let Some(component) = pipeline.components.get(&task.component) else {
            error(id, format!("unknown component `{}`", task.component), &mut findings, &mut failed);
            continue;
        };
        match catalog.get(&component.tool_ref) {
            None => error(id, format!("tool `{}` is not in the catalog", component.tool_ref), &mut findings, &mut failed),
            Some(tool) => {
                if tool.implementation != component.implementation {
                    error(id, format!("implementation differs from tool `{}`", tool.id), &mut findings, &mut failed);
                }
                if tool.interface.inputs != component.inputs || tool.interface.outputs != component.outputs {
                    error(id, format!("interface differs from tool `{}`", tool.id), &mut findings, &mut failed);
                }
            }
        }

        for (input, ty) in &component.inputs {
            let Some(binding) = task.inputs.get(input) else {
                error(id, format!("input `{input}` is unbound"), &mut findings, &mut failed);
                continue;
            };
            let problem = match binding {
                Binding::Literal(text) => {
                    if !is_scalar(*ty) {
                        Some(format!("input `{input}` expects {ty:?} but is bound to a literal"))
                    } else if *ty == SemType::Json && serde_json::from_str::<serde_json::Value>(text).is_err() {
                        Some(format!("input `{input}` is not valid JSON"))
                    } else {
                        None
                    }
                }
                Binding::Param(p) => {
                    if !pipeline.parameters.contains_key(p) {
                        Some(format!("input `{input}` refers to unknown parameter `{p}`"))
                    } else if !is_scalar(*ty) {
                        Some(format!("input `{input}` expects {ty:?} but is bound to a parameter"))
                    } else {
                        None
                    }
                }
                Binding::Upstream(refs) if refs.is_empty() => Some(format!("input `{input}` has no upstream reference")),
                Binding::Upstream(refs) => refs.iter().find_map(|r| {
                    let Some((up, output)) = split_ref(r) else {
                        return Some(format!("malformed reference `{r}`"));
                    };
                    let Some(up_task) = pipeline.tasks.get(up) else {
                        return Some(format!("reference `{r}` names unknown task `{up}`"));
                    };
                    let out_ty = pipeline
                        .components
                        .get(&up_task.component)
                        .and_then(|c| c.outputs.get(output).copied());
                    match out_ty {
                        None => Some(format!("task `{up}` has no output `{output}`")),
                        Some(t) if t != *ty => Some(format!("input `{input}` expects {ty:?} but `{r}` is {t:?}")),
                        Some(t) if refs.len() > 1 && !matches!(t, SemType::Dataset | SemType::Count) => {
                            Some(format!("input `{input}` cannot merge several {t:?} outputs"))
                        }
                        _ => None,
                    }
                }),
            };
            if let Some(message) = problem {
                error(id, message, &mut findings, &mut failed);
            }
        }
        if let Some(message) = transform_params_problem(&component.implementation, task.inputs.get("params")) {
            error(id, message, &mut findings, &mut failed);
        }
        for input in task.inputs.keys() {
            if !component.inputs.contains_key(input) {
                error(id, format!("binding for unknown input `{input}`"), &mut findings, &mut failed);
            }
        }
        for dep in &task.depends_on {
            if !pipeline.tasks.contains_key(dep) {
                error(id, format!("depends on unknown task `{dep}`"), &mut findings, &mut failed);
            }
        }
    }

    for cycle in find_cycles(pipeline) {
        for task in &cycle {
            error(task, format!("part of dependency cycle {}", cycle.join(" -> ")), &mut findings, &mut failed);
        }
    }

    // Tasks whose outputs nobody consumes and that have no effect of their own.
    let consumed: BTreeSet<String> = pipeline.tasks.values().flat_map(|t| t.dependencies()).collect();
    for (id, task) in &pipeline.tasks {
        if consumed.contains(id) {
            continue;
        }
        let sink = pipeline
            .components
            .get(&task.component)
            .and_then(|c| catalog.get(&c.tool_ref))
            .is_none_or(|t| matches!(t.role, ToolRole::Loader | ToolRole::Validator));
        if !sink {
            findings.push(CompileFinding {
                task: Some(id.clone()),
                level: FindingLevel::Warning,
                message: "outputs are never used".into(),
            });
        }
    }

    let tasks: BTreeMap<String, ComponentStatus> = pipeline
        .tasks
        .keys()
        .map(|id| {
            let status = if failed.contains(id) { ComponentStatus::Failed } else { ComponentStatus::Compiled };
            (id.clone(), status)
        })
        .collect();
    let pipeline_ok = !findings.iter().any(|f| f.level == FindingLevel::Error);
    CompileReport {
        tasks,
        findings,
        pipeline_ok,
    }
}

/// Literal transform parameters must describe a runnable step.
fn transform_params_problem(implementation: &Implementation, params: Option<&Binding>) -> Option<String> {
    let Some(Binding::Literal(text)) = params else { return None };
    let params: BTreeMap<String, serde_json::Value> = match serde_json::from_str(text) {
        Ok(p) => p,
        Err(_) => return Some("transform parameters must be a JSON object".into()),
    };
    let steps = match implementation {
        Implementation::Builtin(b) => vec![TransformStep {
            op: b.strip_prefix("transform.")?.to_string(),
            params,
        }],
        Implementation::Dsl(steps) => substitute(steps, &params),
    };
    steps
        .iter()
        .find_map(|s| TransformOp::from_step(s).err())
        .map(|e| format!("invalid transform parameters: {e}"))
}

/// Strongly connected components with more than one task, plus self loops.
/// Each cycle lists its tasks in id order.
fn find_cycles(pipeline: &PipelineSpec) -> Vec<Vec<String>> {
    let ids: Vec<&String> = pipeline.tasks.keys().collect();
    let index: BTreeMap<&String, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let edges: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| {
            pipeline.tasks[*id]
                .dependencies()
                .iter()
                .filter_map(|d| index.get(d).copied())
                .collect()
        })
        .collect();

    // Iterative Tarjan.
    let n = ids.len();
    let mut idx = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut counter = 0;
    let mut out = Vec::new();
    for root in 0..n {
        if idx[root] != usize::MAX {
            continue;
        }
        let mut work = vec![(root, 0usize)];
        idx[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = work.last_mut() {
            if *next < edges[v].len() {
                let w = edges[v][*next];
                *next += 1;
                if idx[w] == usize::MAX {
                    idx[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(idx[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == idx[v] {
                let mut component = Vec::new();
                loop {
                    let w = stack.pop().expect("scc member");
                    on_stack[w] = false;
                    component.push(w);
                    if w == v {
                        break;
                    }
                }
                if component.len() > 1 || edges[v].contains(&v) {
                    let mut names: Vec<String> = component.iter().map(|&i| ids[i].clone()).collect();
                    names.sort();
                    out.push(names);
                }
            }
        }
    }
    out.sort();
    out
}
