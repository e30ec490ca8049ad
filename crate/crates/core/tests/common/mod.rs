#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use pipetune::evaluation::mock::{MockFunction, MockSpec, PairBonus};
use pipetune::evaluation::MockProgram;
use pipetune::pipeline::{parse_pipeline, Rule};
use pipetune::{PassLevel, PassRegistry, PipelineForest, PipelineNode, TypedPass};
use rand::seq::SliceRandom;
use rand::Rng;

/// Two passes per level, names chosen so the level is obvious.
pub fn small_registry() -> PassRegistry {
    use PassLevel::*;
    PassRegistry::from_pairs([
        ("m1", Module),
        ("m2", Module),
        ("c1", Cgscc),
        ("c2", Cgscc),
        ("f1", Function),
        ("f2", Function),
        ("l1", Loop),
        ("l2", Loop),
    ])
}

pub fn typed(registry: &PassRegistry, name: &str) -> TypedPass {
    TypedPass::new(name, registry.level_of(name).expect("fixed-level pass"))
}

pub fn parse(text: &str, registry: &PassRegistry) -> PipelineForest {
    parse_pipeline(text, registry).unwrap_or_else(|e| panic!("`{text}` should parse: {e}"))
}

// ---------------------------------------------------------------------------
// Reference simulator

/// Straight reimplementation of the mock semantics on top of an explicit
/// work stack, sharing no code with the library.
pub fn oracle_schedule(forest: &PipelineForest, functions: usize) -> Vec<(String, usize)> {
    enum Work<'a> {
        Node(&'a PipelineNode, Option<usize>),
    }
    let mut out = Vec::new();
    let mut stack: Vec<Work> = forest.trees.iter().rev().map(|t| Work::Node(t, None)).collect();
    while let Some(Work::Node(node, cur)) = stack.pop() {
        match node {
            PipelineNode::Leaf { pass, .. } => match cur {
                Some(f) => out.push((pass.clone(), f)),
                None => {
                    for f in 0..functions {
                        out.push((pass.clone(), f));
                    }
                }
            },
            PipelineNode::Manager { level, children } => {
                let per_function = cur.is_none() && *level != PassLevel::Module;
                if per_function {
                    for f in (0..functions).rev() {
                        for c in children.iter().rev() {
                            stack.push(Work::Node(c, Some(f)));
                        }
                    }
                } else {
                    for c in children.iter().rev() {
                        stack.push(Work::Node(c, cur));
                    }
                }
            }
        }
    }
    out
}

pub fn oracle_count(spec: &MockSpec, forest: &PipelineForest) -> u64 {
    let names: Vec<&str> = spec.functions.iter().map(|f| f.name.as_str()).collect();
    let idx = |n: &str| names.iter().position(|x| *x == n).unwrap();
    let mut callees: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); names.len()];
    for (a, b) in &spec.calls {
        callees[idx(a)].insert(idx(b));
    }
    let mut history: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    let mut removed = vec![0i128; names.len()];
    for (pass, f) in oracle_schedule(forest, names.len()) {
        let mut r = *spec.effects.get(&pass).unwrap_or(&0) as i128;
        for b in &spec.pair_synergy {
            if b.q == pass && history[f].contains(&b.p) {
                r += b.bonus as i128;
            }
        }
        if !callees[f].is_empty() {
            for b in &spec.coupling {
                if b.q == pass && callees[f].iter().all(|&c| history[c].contains(&b.p)) {
                    r += b.bonus as i128;
                }
            }
        }
        removed[f] += r;
        history[f].push(pass);
    }
    spec.functions
        .iter()
        .zip(removed)
        .map(|(f, r)| (f.base_ic as i128 - r).max(0) as u64)
        .sum()
}

// ---------------------------------------------------------------------------
// Pipeline shapes written out by hand

fn minimal_text(p: &str, level: PassLevel) -> String {
    match level {
        PassLevel::Module => format!("module({p})"),
        PassLevel::Cgscc => format!("module(cgscc({p}))"),
        PassLevel::Function => format!("module(function({p}))"),
        PassLevel::Loop => format!("module(function(loop({p})))"),
    }
}

pub fn oracle_single(p: &TypedPass) -> String {
    minimal_text(&p.name, p.level)
}

/// The pair skeleton used by mining, spelled out per level combination.
pub fn oracle_pair_skeleton(a: &TypedPass, b: &TypedPass) -> String {
    use PassLevel::*;
    let (p, q) = (&a.name, &b.name);
    match (a.level, b.level) {
        (Module, Module) => format!("module({p},{q})"),
        (Cgscc, Cgscc) => format!("module(cgscc({p},{q}))"),
        (Function, Function) => format!("module(function({p},{q}))"),
        (Loop, Loop) => format!("module(function(loop({p},{q})))"),
        (Module, Cgscc) => format!("module({p},cgscc({q}))"),
        (Module, Function) => format!("module({p},function({q}))"),
        (Module, Loop) => format!("module({p},function(loop({q})))"),
        (Cgscc, Function) => format!("module(cgscc({p},function({q})))"),
        (Cgscc, Loop) => format!("module(cgscc({p},function(loop({q}))))"),
        (Function, Loop) => format!("module(function({p},loop({q})))"),
        (x, y) => format!("{},{}", minimal_text(p, x), minimal_text(q, y)),
    }
}

/// Forest for one join/split assignment, built as text. `splits[k]` refers
/// to the k-th boundary between same-level neighbours.
pub fn oracle_partition(seq: &[TypedPass], splits: &[bool]) -> String {
    let mut blocks: Vec<(PassLevel, Vec<&str>)> = Vec::new();
    let mut k = 0;
    for (i, p) in seq.iter().enumerate() {
        let new_block = if i == 0 {
            true
        } else if seq[i - 1].level == p.level {
            k += 1;
            splits[k - 1]
        } else {
            true
        };
        if new_block {
            blocks.push((p.level, Vec::new()));
        }
        blocks.last_mut().unwrap().1.push(&p.name);
    }
    assert_eq!(k, splits.len());
    let mut trees: Vec<Vec<String>> = vec![Vec::new()];
    let mut last = None;
    for (level, names) in blocks {
        let body = names.join(",");
        match level {
            PassLevel::Module => {
                if last == Some(PassLevel::Module) {
                    trees.push(Vec::new());
                }
                trees.last_mut().unwrap().push(body);
            }
            PassLevel::Cgscc => trees.last_mut().unwrap().push(format!("cgscc({body})")),
            PassLevel::Function => trees.last_mut().unwrap().push(format!("function({body})")),
            PassLevel::Loop => trees.last_mut().unwrap().push(format!("function(loop({body}))")),
        }
        last = Some(level);
    }
    trees
        .into_iter()
        .map(|t| format!("module({})", t.join(",")))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn same_level_boundaries(seq: &[TypedPass]) -> usize {
    seq.windows(2).filter(|w| w[0].level == w[1].level).count()
}

// ---------------------------------------------------------------------------
// Random inputs

/// A random mock with an acyclic call graph over the given passes.
pub fn random_mock<R: Rng>(rng: &mut R, passes: &[TypedPass], planted_coupling: bool) -> MockSpec {
    let n = if planted_coupling { rng.gen_range(2..=4) } else { rng.gen_range(1..=4) };
    let functions: Vec<MockFunction> = (0..n)
        .map(|i| MockFunction {
            name: format!("fn{i}"),
            base_ic: rng.gen_range(20..200),
        })
        .collect();
    let mut calls = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                calls.push((functions[i].name.clone(), functions[j].name.clone()));
            }
        }
    }
    if planted_coupling && calls.is_empty() {
        calls.push((functions[0].name.clone(), functions[1].name.clone()));
    }
    let effects: BTreeMap<String, u64> = passes
        .iter()
        .map(|p| (p.name.clone(), rng.gen_range(0..8)))
        .collect();
    let bonus = |rng: &mut R, count: usize| -> Vec<PairBonus> {
        (0..count)
            .map(|_| PairBonus {
                p: passes.choose(rng).unwrap().name.clone(),
                q: passes.choose(rng).unwrap().name.clone(),
                bonus: rng.gen_range(1..12),
            })
            .collect()
    };
    let pair_synergy = {
        let k = rng.gen_range(0..4);
        bonus(rng, k)
    };
    let coupling = {
        let k = if planted_coupling { rng.gen_range(1..4) } else { rng.gen_range(0..2) };
        bonus(rng, k)
    };
    MockSpec {
        functions,
        calls,
        effects,
        pair_synergy,
        coupling,
    }
}

pub fn program(spec: &MockSpec) -> MockProgram {
    MockProgram::new(spec.clone()).expect("generated mock is well-formed")
}

/// Random pass sequence drawn from the registry's fixed-level passes.
pub fn random_sequence<R: Rng>(rng: &mut R, registry: &PassRegistry, len: usize) -> Vec<TypedPass> {
    let pool: Vec<TypedPass> = registry
        .concrete_passes()
        .into_iter()
        .map(|(n, l)| TypedPass::new(n, l))
        .collect();
    (0..len).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

// ---------------------------------------------------------------------------
// Single-rule mutants

fn manager_paths_at(forest: &PipelineForest, level: PassLevel) -> Vec<Vec<usize>> {
    forest
        .manager_paths()
        .into_iter()
        .filter(|p| forest.node(p).unwrap().level() == level)
        .collect()
}

fn any_pass_at(registry: &PassRegistry, level: PassLevel) -> String {
    registry
        .concrete_passes()
        .into_iter()
        .find(|(_, l)| *l == level)
        .map(|(n, _)| n.to_string())
        .expect("registry covers every level")
}

/// Breaks exactly one grammar rule in a valid forest and reports which.
/// Returns `None` if the chosen rule has no site in this forest.
pub fn mutate_one_rule<R: Rng>(
    forest: &PipelineForest,
    registry: &PassRegistry,
    rule: Rule,
    rng: &mut R,
) -> Option<PipelineForest> {
    use PassLevel::*;
    let mut f = forest.clone();
    let levels = [Module, Cgscc, Function, Loop];
    match rule {
        Rule::R1 => {
            let i = rng.gen_range(0..f.trees.len());
            let bad = if rng.gen_bool(0.5) {
                let level = *[Cgscc, Function, Loop].choose(rng).unwrap();
                PipelineNode::manager(level, vec![PipelineNode::leaf(any_pass_at(registry, level), level)])
            } else {
                PipelineNode::leaf(any_pass_at(registry, Module), Module)
            };
            f.trees[i] = bad;
        }
        Rule::R2 | Rule::R4 | Rule::R6 | Rule::R8 => {
            let level = levels[[Rule::R2, Rule::R4, Rule::R6, Rule::R8].iter().position(|r| *r == rule).unwrap()];
            let sites = manager_paths_at(&f, level);
            let path = sites.choose(rng)?.clone();
            if let PipelineNode::Manager { children, .. } = f.node_mut(&path).unwrap() {
                children.clear();
            }
        }
        Rule::R3 | Rule::R5 | Rule::R7 | Rule::R9 => {
            let level = levels[[Rule::R3, Rule::R5, Rule::R7, Rule::R9].iter().position(|r| *r == rule).unwrap()];
            let sites = manager_paths_at(&f, level);
            let path = sites.choose(rng)?.clone();
            let wrong: Vec<PassLevel> = levels.iter().copied().filter(|l| *l != level).collect();
            let intruder = if rng.gen_bool(0.5) {
                let l = *wrong.choose(rng).unwrap();
                PipelineNode::leaf(any_pass_at(registry, l), l)
            } else {
                let disallowed: Vec<PassLevel> = levels
                    .iter()
                    .copied()
                    .filter(|l| !pipetune::pipeline::grammar::manager_admits_manager(level, *l))
                    .collect();
                match disallowed.choose(rng) {
                    Some(&l) => PipelineNode::manager(l, vec![PipelineNode::leaf(any_pass_at(registry, l), l)]),
                    None => {
                        let l = *wrong.choose(rng).unwrap();
                        PipelineNode::leaf(any_pass_at(registry, l), l)
                    }
                }
            };
            if let PipelineNode::Manager { children, .. } = f.node_mut(&path).unwrap() {
                let at = rng.gen_range(0..=children.len());
                children.insert(at, intruder);
            }
        }
    }
    Some(f)
}

pub const ALL_RULES: [Rule; 9] = [
    Rule::R1,
    Rule::R2,
    Rule::R3,
    Rule::R4,
    Rule::R5,
    Rule::R6,
    Rule::R7,
    Rule::R8,
    Rule::R9,
];
