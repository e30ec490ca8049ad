//! Synthetic programs with nesting-sensitive execution semantics.
//!
//! A [`MockProgram`] is a handful of functions with base instruction counts
//! and a call DAG. Passes remove a fixed number of instructions per
//! application, plus bonuses that depend on what the function (or its
//! callees) has already seen:
//!
//! * `pair_synergy (p, q)`: `q` runs on a function that has already had `p`.
//! * `coupling (p, q)`: `q` runs on a caller whose every callee has already
//!   had `p`.
//!
//! Execution order of a forest:
//!
//! * trees, and children of a module manager, run in order;
//! * a pass directly in a module manager runs over every function in
//!   declaration order before the next element starts;
//! * a function or cgscc manager reached at module scope walks the functions
//!   in declaration order and runs its whole block on one function before
//!   moving to the next (each function is treated as its own SCC);
//! * managers nested inside that walk (function, loop, cgscc) inherit the
//!   current function.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EvalError, EvaluationResult, Evaluator};
use crate::pipeline::{PipelineForest, PipelineNode};
use crate::registry::PassLevel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MockError {
    #[error("invalid mock spec JSON: {0}")]
    Json(String),
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("call edge references unknown function `{0}`")]
    UnknownFunction(String),
    #[error("call graph has a cycle through `{0}`")]
    CyclicCalls(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFunction {
    pub name: String,
    pub base_ic: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairBonus {
    pub p: String,
    pub q: String,
    pub bonus: u64,
}

/// On-disk layout of a mock program.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    pub functions: Vec<MockFunction>,
    #[serde(default)]
    pub calls: Vec<(String, String)>,
    #[serde(default)]
    pub effects: BTreeMap<String, u64>,
    #[serde(default)]
    pub pair_synergy: Vec<PairBonus>,
    #[serde(default)]
    pub coupling: Vec<PairBonus>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockProgram {
    spec: MockSpec,
    callees: Vec<Vec<usize>>,
    synergy: BTreeMap<(String, String), u64>,
    coupling: BTreeMap<(String, String), u64>,
}

impl MockProgram {
    pub fn new(spec: MockSpec) -> Result<Self, MockError> {
        let mut index = BTreeMap::new();
        for (i, f) in spec.functions.iter().enumerate() {
            if index.insert(f.name.clone(), i).is_some() {
                return Err(MockError::DuplicateFunction(f.name.clone()));
            }
        }
        let mut callees = vec![Vec::new(); spec.functions.len()];
        for (caller, callee) in &spec.calls {
            let a = *index.get(caller).ok_or_else(|| MockError::UnknownFunction(caller.clone()))?;
            let b = *index.get(callee).ok_or_else(|| MockError::UnknownFunction(callee.clone()))?;
            if !callees[a].contains(&b) {
                callees[a].push(b);
            }
        }
        if let Some(f) = find_cycle(&callees) {
            return Err(MockError::CyclicCalls(spec.functions[f].name.clone()));
        }
        let fold = |entries: &[PairBonus]| {
            let mut map = BTreeMap::new();
            for e in entries {
                *map.entry((e.p.clone(), e.q.clone())).or_insert(0) += e.bonus;
            }
            map
        };
        Ok(MockProgram {
            synergy: fold(&spec.pair_synergy),
            coupling: fold(&spec.coupling),
            callees,
            spec,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, MockError> {
        let spec: MockSpec = serde_json::from_str(text).map_err(|e| MockError::Json(e.to_string()))?;
        Self::new(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("mock spec serializes")
    }

    pub fn spec(&self) -> &MockSpec {
        &self.spec
    }

    pub fn function_names(&self) -> impl Iterator<Item = &str> {
        self.spec.functions.iter().map(|f| f.name.as_str())
    }

    pub fn original_count(&self) -> u64 {
        self.spec.functions.iter().map(|f| f.base_ic).sum()
    }

    /// Instruction count after running `forest`.
    pub fn simulate(&self, forest: &PipelineForest) -> u64 {
        let events = raw_schedule(forest, self.spec.functions.len());
        let n = self.spec.functions.len();
        let mut removed = vec![0u64; n];
        let mut seen: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
        for (pass, f) in events {
            let mut r = self.spec.effects.get(pass).copied().unwrap_or(0);
            for ((p, q), bonus) in &self.synergy {
                if q == pass && seen[f].contains(p.as_str()) {
                    r += bonus;
                }
            }
            if !self.callees[f].is_empty() {
                for ((p, q), bonus) in &self.coupling {
                    if q == pass && self.callees[f].iter().all(|&c| seen[c].contains(p.as_str())) {
                        r += bonus;
                    }
                }
            }
            removed[f] = removed[f].saturating_add(r);
            seen[f].insert(pass);
        }
        self.spec
            .functions
            .iter()
            .zip(&removed)
            .map(|(f, r)| f.base_ic.saturating_sub(*r))
            .sum()
    }
}

fn find_cycle(callees: &[Vec<usize>]) -> Option<usize> {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn dfs(v: usize, callees: &[Vec<usize>], state: &mut [u8]) -> Option<usize> {
        state[v] = 1;
        for &w in &callees[v] {
            match state[w] {
                1 => return Some(w),
                0 => {
                    if let Some(c) = dfs(w, callees, state) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        state[v] = 2;
        None
    }
    let mut state = vec![0u8; callees.len()];
    (0..callees.len()).find_map(|v| if state[v] == 0 { dfs(v, callees, &mut state) } else { None })
}

/// One pass application on one function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleEvent {
    pub pass: String,
    pub function: String,
}

pub type ExecutionSchedule = Vec<ScheduleEvent>;

/// The ordered pass applications `forest` performs on `program`.
pub fn schedule_of(forest: &PipelineForest, program: &MockProgram) -> ExecutionSchedule {
    raw_schedule(forest, program.spec.functions.len())
        .into_iter()
        .map(|(pass, f)| ScheduleEvent {
            pass: pass.to_string(),
            function: program.spec.functions[f].name.clone(),
        })
        .collect()
}

fn raw_schedule(forest: &PipelineForest, functions: usize) -> Vec<(&str, usize)> {
    fn exec<'f>(node: &'f PipelineNode, current: Option<usize>, n: usize, out: &mut Vec<(&'f str, usize)>) {
        match (node, current) {
            (PipelineNode::Leaf { pass, .. }, Some(f)) => out.push((pass, f)),
            (PipelineNode::Leaf { pass, .. }, None) => out.extend((0..n).map(|f| (pass.as_str(), f))),
            (PipelineNode::Manager { level: PassLevel::Module, children }, _) | (PipelineNode::Manager { children, .. }, Some(_)) => {
                children.iter().for_each(|c| exec(c, current, n, out))
            }
            (PipelineNode::Manager { children, .. }, None) => {
                for f in 0..n {
                    children.iter().for_each(|c| exec(c, Some(f), n, out));
                }
            }
        }
    }
    let mut out = Vec::new();
    for tree in &forest.trees {
        exec(tree, None, functions, &mut out);
    }
    out
}

/// Backend that evaluates forests on a [`MockProgram`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEvaluator;

impl Evaluator for MockEvaluator {
    type Program = MockProgram;

    fn original_count(&self, program: &MockProgram) -> Result<u64, EvalError> {
        Ok(program.original_count())
    }

    fn run(&self, program: &MockProgram, forest: &PipelineForest) -> Result<EvaluationResult, EvalError> {
        Ok(EvaluationResult::ok(program.simulate(forest)))
    }
}
