//! Offline synergy mining.
//!
//! For every program, each ordered pass pair `(p1, p2)` is run in a single
//! representative skeleton. The pair is recorded as `p1 -> p2` when the
//! combined reduction strictly beats the sum of the two single-pass
//! reductions. Counts over the dataset are normalized into a
//! [`SynergyGraph`].

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{EvalError, Evaluator};
use crate::pipeline::{minimal_wrap, nest_under, wrap_block, PipelineForest, PipelineNode, TypedPass};
use crate::registry::{PassLevel, PassRegistry};

mod graph;

pub use graph::{
    EdgeType, GraphError, GraphMeta, PairCount, SynergyCounts, SynergyEdge, SynergyGraph, NORMALIZATION_TOLERANCE,
};

/// Single skeleton used to measure a pair.
///
/// When `p2` runs at or below `p1`'s level, both share one tree and `p2`'s
/// manager chain hangs off `p1`'s manager. Upward pairs become two
/// sequential trees.
pub fn build_representative_skeleton(p1: &TypedPass, p2: &TypedPass) -> PipelineForest {
    if p2.level < p1.level {
        return PipelineForest::new(vec![
            minimal_wrap(&p1.name, p1.level),
            minimal_wrap(&p2.name, p2.level),
        ]);
    }
    let second = if p2.level == p1.level {
        PipelineNode::leaf(&p2.name, p2.level)
    } else {
        nest_under(p1.level, p2.level, vec![PipelineNode::leaf(&p2.name, p2.level)])
    };
    let block = vec![PipelineNode::leaf(&p1.name, p1.level), second];
    PipelineForest::new(vec![wrap_block(p1.level, block)])
}

pub fn classify_synergy_type(p1: PassLevel, p2: PassLevel) -> EdgeType {
    if p1 == p2 {
        EdgeType::IntraLevel
    } else {
        EdgeType::InterLevel
    }
}

/// A program in a mining dataset, with a stable identifier.
#[derive(Debug, Clone)]
pub struct ProgramEntry<P> {
    pub id: String,
    pub program: P,
}

#[derive(Debug, Clone, Default)]
pub struct MiningOptions {
    /// Concurrent pair evaluations; 0 or 1 means sequential.
    pub parallel: usize,
    /// Partial counts are written here after every program and picked up
    /// again on the next run over the same dataset and registry.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("checkpoint `{path}`: {message}")]
    Checkpoint { path: String, message: String },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// What mining one program produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProgramSynergies {
    pub original_ic: u64,
    /// Single-pass reductions; `None` where the evaluation failed.
    pub baseline: BTreeMap<String, Option<i64>>,
    pub recorded: Vec<(String, String, EdgeType)>,
    pub evaluations: usize,
}

/// Mines one program: original count, per-pass baselines, then every
/// ordered pair (self-pairs included).
pub fn mine_program<E: Evaluator>(
    program: &E::Program,
    passes: &[TypedPass],
    backend: &E,
    parallel: usize,
) -> Result<ProgramSynergies, MiningError> {
    let pool = build_pool(parallel)?;
    pool.install(|| mine_program_in_pool(program, passes, backend))
}

fn build_pool(parallel: usize) -> Result<rayon::ThreadPool, MiningError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| MiningError::Pool(e.to_string()))
}

fn mine_program_in_pool<E: Evaluator>(
    program: &E::Program,
    passes: &[TypedPass],
    backend: &E,
) -> Result<ProgramSynergies, MiningError> {
    let original = backend.original_count(program)? as i64;
    let mut evaluations = 1;

    let baselines: Vec<Option<i64>> = passes
        .par_iter()
        .map(|p| {
            let forest = PipelineForest::new(vec![minimal_wrap(&p.name, p.level)]);
            let res = backend.run(program, &forest)?;
            Ok(res.instruction_count().map(|ic| original - ic as i64))
        })
        .collect::<Result<_, EvalError>>()?;
    evaluations += passes.len();

    let pairs: Vec<(usize, usize)> = (0..passes.len())
        .flat_map(|i| (0..passes.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| baselines[i].is_some() && baselines[j].is_some())
        .collect();

    let combined: Vec<Option<i64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let forest = build_representative_skeleton(&passes[i], &passes[j]);
            let res = backend.run(program, &forest)?;
            Ok(res.instruction_count().map(|ic| original - ic as i64))
        })
        .collect::<Result<_, EvalError>>()?;
    evaluations += pairs.len();

    let mut recorded = Vec::new();
    for (&(i, j), perf) in pairs.iter().zip(&combined) {
        let (p1, p2) = (&passes[i], &passes[j]);
        let Some(perf_combined) = perf else {
            warn!("pair ({}, {}) failed to evaluate; skipped", p1.name, p2.name);
            continue;
        };
        let perf_sum = baselines[i].unwrap() + baselines[j].unwrap();
        if *perf_combined > perf_sum {
            recorded.push((
                p1.name.clone(),
                p2.name.clone(),
                classify_synergy_type(p1.level, p2.level),
            ));
        }
    }

    Ok(ProgramSynergies {
        original_ic: original as u64,
        baseline: passes
            .iter()
            .zip(baselines)
            .map(|(p, b)| (p.name.clone(), b))
            .collect(),
        recorded,
        evaluations,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    registry_hash: String,
    dataset: Vec<String>,
    processed: Vec<String>,
    counts: SynergyCounts,
}

/// Passes considered by mining: every pass with a fixed level.
pub fn mining_passes(registry: &PassRegistry) -> Vec<TypedPass> {
    registry
        .concrete_passes()
        .into_iter()
        .map(|(n, l)| TypedPass::new(n, l))
        .collect()
}

/// Builds the synergy graph over a dataset.
///
/// A program whose original count cannot be determined is skipped with a
/// warning; an unavailable backend aborts the run.
pub fn mine_synergies<E: Evaluator>(
    dataset: &[ProgramEntry<E::Program>],
    registry: &PassRegistry,
    backend: &E,
    options: &MiningOptions,
) -> Result<SynergyGraph, MiningError> {
    if dataset.is_empty() {
        return Err(MiningError::EmptyDataset);
    }
    let passes = mining_passes(registry);
    let registry_hash = registry.content_hash();
    let ids: Vec<String> = dataset.iter().map(|e| e.id.clone()).collect();

    let mut state = Checkpoint {
        registry_hash: registry_hash.clone(),
        dataset: ids.clone(),
        processed: Vec::new(),
        counts: SynergyCounts::default(),
    };
    if let Some(path) = &options.checkpoint {
        if let Some(saved) = read_checkpoint(path)? {
            if saved.registry_hash == registry_hash && saved.dataset == ids {
                info!("resuming from checkpoint with {} programs done", saved.processed.len());
                state = saved;
            } else {
                warn!("checkpoint `{}` belongs to a different run; starting over", path.display());
            }
        }
    }

    let pool = build_pool(options.parallel)?;
    for entry in dataset {
        if state.processed.contains(&entry.id) {
            continue;
        }
        match pool.install(|| mine_program_in_pool(&entry.program, &passes, backend)) {
            Ok(found) => {
                info!("{}: {} synergies in {} evaluations", entry.id, found.recorded.len(), found.evaluations);
                for (from, to, ty) in &found.recorded {
                    state.counts.record(from, to, *ty);
                }
            }
            Err(MiningError::Eval(EvalError::Baseline(msg))) => {
                warn!("{}: skipped, {msg}", entry.id);
            }
            Err(e) => return Err(e),
        }
        state.processed.push(entry.id.clone());
        if let Some(path) = &options.checkpoint {
            write_checkpoint(path, &state)?;
        }
    }

    Ok(SynergyGraph::from_counts(
        &state.counts,
        GraphMeta {
            registry_hash,
            dataset_size: dataset.len(),
        },
    ))
}

fn read_checkpoint(path: &PathBuf) -> Result<Option<Checkpoint>, MiningError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => {
            return Err(MiningError::Checkpoint {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        }
    };
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| MiningError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

fn write_checkpoint(path: &PathBuf, state: &Checkpoint) -> Result<(), MiningError> {
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string(state).expect("checkpoint serializes");
    fs::write(&tmp, text)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| MiningError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}
