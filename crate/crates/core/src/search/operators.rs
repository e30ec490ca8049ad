//! Structure-aware variation operators. Every operator returns a forest
//! that validates, or leaves its input alone.

use rand::distributions::WeightedIndex;
use rand::prelude::*;

use crate::pipeline::{minimal_wrap, nest_under, validate, NodePath, PipelineForest, PipelineNode, TypedPass};
use crate::registry::{PassLevel, PassRegistry};
use crate::synergy::{SynergyEdge, SynergyGraph};

/// Level of `name` if the registry gives it a fixed one.
fn fixed_level(registry: &PassRegistry, name: &str) -> Option<PassLevel> {
    registry.get(name).ok().and_then(|p| p.fixed_level())
}

fn concrete(registry: &PassRegistry) -> Vec<TypedPass> {
    registry
        .concrete_passes()
        .into_iter()
        .map(|(n, l)| TypedPass::new(n, l))
        .collect()
}

/// Inserts `pass` right after the leaf at `anchor` and returns the path of
/// the new leaf.
///
/// * same level: next sibling of the anchor;
/// * deeper: a manager chain opened right after the anchor;
/// * shallower: a new tree after the anchor's tree.
pub fn place_after(forest: &mut PipelineForest, anchor: &[usize], pass: &TypedPass) -> NodePath {
    let anchor_level = forest.node(anchor).expect("anchor exists").level();
    let mut at = anchor.to_vec();
    if pass.level == anchor_level {
        *at.last_mut().unwrap() += 1;
        forest.insert_at(&at, PipelineNode::leaf(&pass.name, pass.level));
        at
    } else if pass.level > anchor_level {
        *at.last_mut().unwrap() += 1;
        let chain = nest_under(anchor_level, pass.level, vec![PipelineNode::leaf(&pass.name, pass.level)]);
        let depth = chain_depth(&chain);
        forest.insert_at(&at, chain);
        at.extend(std::iter::repeat_n(0, depth));
        at
    } else {
        let tree = minimal_wrap(&pass.name, pass.level);
        let depth = chain_depth(&tree);
        let mut at = vec![anchor[0] + 1];
        forest.insert_at(&at, tree);
        at.extend(std::iter::repeat_n(0, depth));
        at
    }
}

/// Managers between the top of a single-leaf chain and its leaf.
fn chain_depth(node: &PipelineNode) -> usize {
    match node {
        PipelineNode::Leaf { .. } => 0,
        PipelineNode::Manager { children, .. } => 1 + chain_depth(&children[0]),
    }
}

/// Draws the first pass of a walk from the start distribution. Passes the
/// registry does not know at a fixed level are ignored.
pub fn draw_start<R: Rng + ?Sized>(graph: &SynergyGraph, registry: &PassRegistry, rng: &mut R) -> Option<TypedPass> {
    let options: Vec<(TypedPass, f64)> = graph
        .start_weights()
        .iter()
        .filter(|(_, w)| **w > 0.0)
        .filter_map(|(p, w)| fixed_level(registry, p).map(|l| (TypedPass::new(p.clone(), l), *w)))
        .collect();
    let dist = WeightedIndex::new(options.iter().map(|(_, w)| *w)).ok()?;
    Some(options[dist.sample(rng)].0.clone())
}

/// Weighted pick among the outgoing edges of `from`.
fn draw_successor<R: Rng + ?Sized>(
    graph: &SynergyGraph,
    registry: &PassRegistry,
    from: &str,
    rng: &mut R,
) -> Option<TypedPass> {
    let options: Vec<(&SynergyEdge, PassLevel)> = graph
        .successors(from)
        .iter()
        .filter(|e| e.weight > 0.0)
        .filter_map(|e| fixed_level(registry, &e.to).map(|l| (e, l)))
        .collect();
    let dist = WeightedIndex::new(options.iter().map(|(e, _)| e.weight)).ok()?;
    let (edge, level) = options[dist.sample(rng)];
    Some(TypedPass::new(edge.to.clone(), level))
}

fn random_concrete<R: Rng + ?Sized>(passes: &[TypedPass], rng: &mut R) -> Option<TypedPass> {
    passes.choose(rng).cloned()
}

/// Builds an individual by walking the synergy graph.
///
/// Without usable start weights the walk degrades to uniformly random
/// passes of a uniformly random length, placed by the same rules.
pub fn weighted_walk_init<R: Rng + ?Sized>(
    graph: &SynergyGraph,
    registry: &PassRegistry,
    max_len: usize,
    rng: &mut R,
) -> Option<PipelineForest> {
    let max_len = max_len.max(1);
    if let Some(start) = draw_start(graph, registry, rng) {
        let mut forest = PipelineForest::new(vec![minimal_wrap(&start.name, start.level)]);
        let mut anchor = forest.leaf_paths().remove(0);
        let mut current = start.name;
        while forest.leaf_count() < max_len {
            let Some(next) = draw_successor(graph, registry, &current, rng) else {
                break;
            };
            anchor = place_after(&mut forest, &anchor, &next);
            current = next.name;
        }
        return Some(forest);
    }
    let passes = concrete(registry);
    let first = random_concrete(&passes, rng)?;
    let len = rng.gen_range(1..=max_len);
    let mut forest = PipelineForest::new(vec![minimal_wrap(&first.name, first.level)]);
    let mut anchor = forest.leaf_paths().remove(0);
    while forest.leaf_count() < len {
        let next = random_concrete(&passes, rng).expect("pool is nonempty");
        anchor = place_after(&mut forest, &anchor, &next);
    }
    Some(forest)
}

/// Swaps the subtrees at `path_a` and `path_b`. `None` when a path does not
/// name a manager or either offspring fails validation.
pub fn swap_subtrees(
    a: &PipelineForest,
    path_a: &[usize],
    b: &PipelineForest,
    path_b: &[usize],
    registry: &PassRegistry,
) -> Option<(PipelineForest, PipelineForest)> {
    let sub_a = a.node(path_a).filter(|n| n.is_manager())?.clone();
    let sub_b = b.node(path_b).filter(|n| n.is_manager())?.clone();
    let mut child_a = a.clone();
    let mut child_b = b.clone();
    child_a.replace_at(path_a, sub_b)?;
    child_b.replace_at(path_b, sub_a)?;
    if validate(&child_a, registry).is_valid() && validate(&child_b, registry).is_valid() {
        Some((child_a, child_b))
    } else {
        None
    }
}

/// Subtree crossover on one random manager per parent. `None` means the
/// swap was discarded and the parents stand.
pub fn crossover<R: Rng + ?Sized>(
    a: &PipelineForest,
    b: &PipelineForest,
    registry: &PassRegistry,
    rng: &mut R,
) -> Option<(PipelineForest, PipelineForest)> {
    let pa = a.manager_paths().choose(rng)?.clone();
    let pb = b.manager_paths().choose(rng)?.clone();
    swap_subtrees(a, &pa, b, &pb, registry)
}

/// Anchor-based mutation.
///
/// A random leaf is the anchor. If the graph lists partners for it, one is
/// drawn by weight and either inserted after the anchor or substituted for
/// the leaf that follows it. Otherwise a random registry pass is inserted
/// after the anchor, or the anchor is renamed to a random pass of its level.
pub fn mutate<R: Rng + ?Sized>(
    forest: &PipelineForest,
    graph: &SynergyGraph,
    registry: &PassRegistry,
    rng: &mut R,
) -> PipelineForest {
    let mut out = forest.clone();
    let leaves = out.leaf_paths();
    let Some(k) = (!leaves.is_empty()).then(|| rng.gen_range(0..leaves.len())) else {
        return out;
    };
    let anchor = leaves[k].clone();
    let (anchor_name, anchor_level) = match out.node(&anchor) {
        Some(PipelineNode::Leaf { pass, level }) => (pass.clone(), *level),
        _ => unreachable!("leaf path"),
    };

    if let Some(partner) = draw_successor(graph, registry, &anchor_name, rng) {
        if rng.gen_bool(0.5) {
            if let Some(next) = leaves.get(k + 1) {
                out.remove_pruning(next);
            }
        }
        place_after(&mut out, &anchor, &partner);
        return out;
    }

    let passes = concrete(registry);
    if rng.gen_bool(0.5) {
        if let Some(p) = random_concrete(&passes, rng) {
            place_after(&mut out, &anchor, &p);
        }
    } else {
        let same: Vec<&TypedPass> = passes.iter().filter(|p| p.level == anchor_level).collect();
        if let Some(p) = same.choose(rng) {
            out.replace_at(&anchor, PipelineNode::leaf(&p.name, anchor_level));
        }
    }
    out
}

/// Drops trailing leaves, and managers they leave empty, until at most
/// `max_len` leaves remain.
pub fn trim(forest: &mut PipelineForest, max_len: usize) {
    while forest.leaf_count() > max_len.max(1) {
        let last = forest.leaf_paths().pop().expect("nonempty");
        forest.remove_pruning(&last);
    }
}
