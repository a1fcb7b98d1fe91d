use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DefError {
    #[error("pipeline definition is not valid: {0}")]
    Parse(String),
    #[error("duplicate stage name {0}")]
    DuplicateStage(String),
    #[error("stage {stage} depends on unknown stage {dependency}")]
    UnknownDependency { stage: String, dependency: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("unbound variable ${{{0}}}")]
    UnboundVariable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageKind {
    Build,
    Package,
    DepCheck,
    LedgerBootstrap,
    Deploy,
    Custom,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDef {
    pub name: String,
    pub kind: StageKind,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl StageDef {
    pub fn new(name: &str, kind: StageKind, depends_on: &[&str]) -> Self {
        StageDef {
            name: name.to_string(),
            kind,
            depends_on: depends_on.iter().map(|s| s.to_string()).collect(),
            params: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }
}

/// A validated stage graph. Construction guarantees unique names, known
/// dependencies and no cycles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PipelineDef {
    stages: Vec<StageDef>,
    #[serde(skip)]
    order: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DefFile {
    stages: Vec<StageDef>,
}

/// Replace every `${NAME}` with its binding. `$` not followed by `{` is
/// literal.
pub fn expand_vars(text: &str, vars: &BTreeMap<String, String>) -> Result<String, DefError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(at) = rest.find("${") {
        out.push_str(&rest[..at]);
        let after = &rest[at + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| DefError::Parse(format!("unterminated variable in {text:?}")))?;
        let name = &after[..end];
        let value = vars
            .get(name)
            .ok_or_else(|| DefError::UnboundVariable(name.to_string()))?;
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl PipelineDef {
    pub fn new(stages: Vec<StageDef>) -> Result<Self, DefError> {
        let mut index = BTreeMap::new();
        for (i, s) in stages.iter().enumerate() {
            if index.insert(s.name.as_str(), i).is_some() {
                return Err(DefError::DuplicateStage(s.name.clone()));
            }
        }
        for s in &stages {
            for d in &s.depends_on {
                if !index.contains_key(d.as_str()) {
                    return Err(DefError::UnknownDependency {
                        stage: s.name.clone(),
                        dependency: d.clone(),
                    });
                }
            }
        }
        if let Some(cycle) = find_cycle(&stages, &index) {
            return Err(DefError::CycleDetected(cycle));
        }
        let order = topological_order(&stages, &index);
        Ok(PipelineDef { stages, order })
    }

    /// Parse JSON and expand `${VAR}` in every param value.
    pub fn parse(bytes: &[u8], vars: &BTreeMap<String, String>) -> Result<Self, DefError> {
        let file: DefFile = serde_json::from_slice(bytes).map_err(|e| DefError::Parse(e.to_string()))?;
        let mut stages = file.stages;
        for s in &mut stages {
            for v in s.params.values_mut() {
                *v = expand_vars(v, vars)?;
            }
        }
        PipelineDef::new(stages)
    }

    pub fn stages(&self) -> &[StageDef] {
        &self.stages
    }

    pub fn stage(&self, name: &str) -> Option<&StageDef> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub(crate) fn index_of(&self, name: &str) -> usize {
        self.stages.iter().position(|s| s.name == name).expect("validated name")
    }

    /// Kahn order; ties broken by definition order.
    pub fn topological_order(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.stages[i].name.as_str()).collect()
    }

    /// Every stage reachable backwards from `name`, excluding itself.
    pub fn ancestors(&self, name: &str) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![name];
        while let Some(n) = stack.pop() {
            let s = &self.stages[self.index_of(n)];
            for d in &s.depends_on {
                if seen.insert(d.as_str()) {
                    stack.push(d);
                }
            }
        }
        seen
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&serde_json::json!({ "stages": self.stages })).expect("plain data")
    }
}

pub fn load_pipeline_def(path: &Path, vars: &BTreeMap<String, String>) -> Result<PipelineDef, DefError> {
    let bytes = std::fs::read(path).map_err(|e| DefError::Parse(format!("{}: {e}", path.display())))?;
    PipelineDef::parse(&bytes, vars)
}

fn find_cycle(stages: &[StageDef], index: &BTreeMap<&str, usize>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    fn visit(
        i: usize,
        stages: &[StageDef],
        index: &BTreeMap<&str, usize>,
        marks: &mut [Mark],
        path: &mut Vec<usize>,
    ) -> Option<Vec<String>> {
        marks[i] = Mark::Open;
        path.push(i);
        for d in &stages[i].depends_on {
            let j = index[d.as_str()];
            match marks[j] {
                Mark::Open => {
                    let from = path.iter().position(|&p| p == j).expect("open node is on path");
                    return Some(path[from..].iter().map(|&p| stages[p].name.clone()).collect());
                }
                Mark::New => {
                    if let Some(c) = visit(j, stages, index, marks, path) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        path.pop();
        marks[i] = Mark::Done;
        None
    }
    let mut marks = vec![Mark::New; stages.len()];
    for i in 0..stages.len() {
        if marks[i] == Mark::New {
            if let Some(c) = visit(i, stages, index, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

fn topological_order(stages: &[StageDef], index: &BTreeMap<&str, usize>) -> Vec<usize> {
    let mut remaining: Vec<usize> = stages.iter().map(|s| s.depends_on.len()).collect();
    let mut dependents = vec![Vec::new(); stages.len()];
    for (i, s) in stages.iter().enumerate() {
        for d in &s.depends_on {
            dependents[index[d.as_str()]].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..stages.len()).filter(|&i| remaining[i] == 0).collect();
    let mut order = Vec::with_capacity(stages.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &j in &dependents[i] {
            remaining[j] -= 1;
            if remaining[j] == 0 {
                ready.insert(j);
            }
        }
    }
    order
}
