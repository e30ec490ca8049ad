//! Random generation of valid forests, used for property tests and fuzzing.

use rand::seq::SliceRandom;
use rand::Rng;

use super::grammar::manager_admits_manager;
use super::{PipelineForest, PipelineNode};
use crate::registry::{LevelSpec, PassLevel, PassRegistry};

#[derive(Debug, Clone, Copy)]
pub struct ForestBounds {
    pub max_trees: usize,
    /// Maximum managers on a root-to-leaf path.
    pub max_depth: usize,
    pub max_width: usize,
}

impl Default for ForestBounds {
    fn default() -> Self {
        ForestBounds {
            max_trees: 3,
            max_depth: 6,
            max_width: 5,
        }
    }
}

/// Pass names usable at each level. Polymorphic passes appear everywhere.
#[derive(Debug, Clone)]
pub struct PassPool {
    by_level: [Vec<String>; 4],
}

impl PassPool {
    pub fn from_registry(registry: &PassRegistry) -> Self {
        let mut by_level: [Vec<String>; 4] = Default::default();
        for info in registry.iter() {
            for (i, level) in PassLevel::ALL.iter().enumerate() {
                if info.level.admits(*level) {
                    by_level[i].push(info.name.clone());
                }
            }
        }
        PassPool { by_level }
    }

    pub fn at(&self, level: PassLevel) -> &[String] {
        &self.by_level[level as usize]
    }

    /// True when every level has at least one pass.
    pub fn is_complete(&self) -> bool {
        self.by_level.iter().all(|v| !v.is_empty())
    }
}

/// Generates a random valid forest. Returns `None` when some level has no
/// passes in the pool.
pub fn random_forest<R: Rng + ?Sized>(pool: &PassPool, bounds: ForestBounds, rng: &mut R) -> Option<PipelineForest> {
    if !pool.is_complete() || bounds.max_depth == 0 || bounds.max_width == 0 {
        return None;
    }
    let trees = rng.gen_range(1..=bounds.max_trees.max(1));
    Some(PipelineForest::new(
        (0..trees)
            .map(|_| random_manager(pool, PassLevel::Module, 1, bounds, rng))
            .collect(),
    ))
}

fn random_manager<R: Rng + ?Sized>(
    pool: &PassPool,
    level: PassLevel,
    depth: usize,
    bounds: ForestBounds,
    rng: &mut R,
) -> PipelineNode {
    let width = rng.gen_range(1..=bounds.max_width);
    let nestable: Vec<PassLevel> = PassLevel::ALL
        .into_iter()
        .filter(|l| manager_admits_manager(level, *l))
        .collect();
    let children = (0..width)
        .map(|_| {
            // Leaves get more weight so trees stay reasonably small.
            if depth < bounds.max_depth && rng.gen_bool(0.35) {
                let child = *nestable.choose(rng).expect("every level admits itself");
                random_manager(pool, child, depth + 1, bounds, rng)
            } else {
                let name = pool.at(level).choose(rng).expect("pool is complete");
                PipelineNode::leaf(name.clone(), level)
            }
        })
        .collect();
    PipelineNode::manager(level, children)
}

/// Uniformly picks a concrete (non-polymorphic) pass at `level`, if any.
pub fn random_pass_at<'r, R: Rng + ?Sized>(
    registry: &'r PassRegistry,
    level: PassLevel,
    rng: &mut R,
) -> Option<&'r str> {
    let candidates: Vec<&str> = registry
        .iter()
        .filter(|p| p.level == LevelSpec::Fixed(level))
        .map(|p| p.name.as_str())
        .collect();
    candidates.choose(rng).copied()
}
