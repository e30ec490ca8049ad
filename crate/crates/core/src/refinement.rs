//! Structural refinement of a fixed pass sequence.
//!
//! The leaf order is kept; only the grouping changes. Between two adjacent
//! passes of different levels a cut is forced, so the only real choices are
//! the boundaries between same-level neighbours ("decision points"). Each
//! one is a bit: 0 joins the two passes in one manager, 1 splits them into
//! sibling managers.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{EvalError, Evaluator};
use crate::pipeline::{nest_under, PipelineForest, PipelineNode, TypedPass};
use crate::registry::PassLevel;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("pass sequence is empty")]
    EmptySequence,
    #[error("chromosome has {actual} bits, problem has {expected} decision points")]
    ChromosomeLengthMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionProblem {
    pub sequence: Vec<TypedPass>,
    /// Boundary `i` sits between `sequence[i]` and `sequence[i + 1]`.
    pub decision_points: Vec<usize>,
}

impl PartitionProblem {
    /// Number of distinct partitions, saturating at `u128::MAX`.
    pub fn space_size(&self) -> u128 {
        1u128.checked_shl(self.decision_points.len() as u32).unwrap_or(u128::MAX)
    }
}

pub type Chromosome = Vec<bool>;

pub fn decision_points(sequence: &[TypedPass]) -> Result<PartitionProblem, RefineError> {
    if sequence.is_empty() {
        return Err(RefineError::EmptySequence);
    }
    let decision_points = sequence
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].level == w[1].level)
        .map(|(i, _)| i)
        .collect();
    Ok(PartitionProblem {
        sequence: sequence.to_vec(),
        decision_points,
    })
}

/// Builds the forest for one partition.
///
/// Blocks become sibling managers of one module tree. Module-level passes
/// sit directly in the module manager, so a split between two module
/// blocks starts a new tree instead.
pub fn decode(problem: &PartitionProblem, chromosome: &[bool]) -> Result<PipelineForest, RefineError> {
    if chromosome.len() != problem.decision_points.len() {
        return Err(RefineError::ChromosomeLengthMismatch {
            expected: problem.decision_points.len(),
            actual: chromosome.len(),
        });
    }
    let split: HashMap<usize, bool> = problem
        .decision_points
        .iter()
        .copied()
        .zip(chromosome.iter().copied())
        .collect();

    let seq = &problem.sequence;
    let mut blocks: Vec<(PassLevel, Vec<PipelineNode>)> = Vec::new();
    for (i, p) in seq.iter().enumerate() {
        let cut = i == 0 || *split.get(&(i - 1)).unwrap_or(&true);
        if cut {
            blocks.push((p.level, Vec::new()));
        }
        blocks.last_mut().unwrap().1.push(PipelineNode::leaf(&p.name, p.level));
    }

    let mut trees: Vec<Vec<PipelineNode>> = vec![Vec::new()];
    let mut prev: Option<PassLevel> = None;
    for (level, leaves) in blocks {
        if level == PassLevel::Module {
            if prev == Some(PassLevel::Module) {
                trees.push(Vec::new());
            }
            trees.last_mut().unwrap().extend(leaves);
        } else {
            trees
                .last_mut()
                .unwrap()
                .push(nest_under(PassLevel::Module, level, leaves));
        }
        prev = Some(level);
    }
    Ok(PipelineForest::new(
        trees
            .into_iter()
            .map(|c| PipelineNode::manager(PassLevel::Module, c))
            .collect(),
    ))
}

/// Reads a forest's join/split profile: bit `i` is 0 iff the two leaves
/// around decision point `i` share their innermost manager.
pub fn encode(forest: &PipelineForest) -> Result<(PartitionProblem, Chromosome), RefineError> {
    let problem = decision_points(&forest.leaf_sequence())?;
    let parents: Vec<Vec<usize>> = forest
        .leaf_paths()
        .into_iter()
        .map(|mut p| {
            p.pop();
            p
        })
        .collect();
    let bits = problem
        .decision_points
        .iter()
        .map(|&i| parents[i] != parents[i + 1])
        .collect();
    Ok((problem, bits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Exhaustive enumeration is used while `2^|D|` stays within this.
    pub exhaustive_budget: u64,
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub parallel: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            exhaustive_budget: 4096,
            population_size: 16,
            generations: 10,
            crossover_rate: 0.9,
            seed: 0,
            parallel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub seed_pipeline: String,
    pub seed_ic: Option<u64>,
    pub refined_pipeline: String,
    pub refined_ic: Option<u64>,
    pub decision_point_count: usize,
    pub evaluations_used: usize,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub forest: PipelineForest,
    pub report: RefinementReport,
}

struct Scorer<'a, E: Evaluator> {
    backend: &'a E,
    program: &'a E::Program,
    pool: rayon::ThreadPool,
    known: HashMap<String, Option<u64>>,
}

impl<E: Evaluator> Scorer<'_, E> {
    fn score(&mut self, forests: &[PipelineForest]) -> Result<Vec<Option<u64>>, EvalError> {
        let mut pending: Vec<(String, &PipelineForest)> = Vec::new();
        for f in forests {
            let key = f.to_pipeline_string();
            if !self.known.contains_key(&key) && !pending.iter().any(|(k, _)| *k == key) {
                pending.push((key, f));
            }
        }
        let (backend, program) = (self.backend, self.program);
        let results: Vec<Result<Option<u64>, EvalError>> = self.pool.install(|| {
            pending
                .par_iter()
                .map(|(_, f)| backend.run(program, f).map(|r| r.instruction_count()))
                .collect()
        });
        for ((key, _), r) in pending.into_iter().zip(results) {
            self.known.insert(key, r?);
        }
        Ok(forests
            .iter()
            .map(|f| self.known[&f.to_pipeline_string()])
            .collect())
    }
}

/// Lower count wins, failures lose, ties go to the smaller pipeline string.
fn improves(cand: (Option<u64>, &str), best: (Option<u64>, &str)) -> bool {
    match (cand.0, best.0) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(a), Some(b)) => a < b || (a == b && cand.1 < best.1),
    }
}

/// Searches the partitions of `seed`'s leaf sequence for the lowest count.
///
/// The seed itself is always evaluated and is only replaced by a strictly
/// better partition, so the result is never worse than the seed.
pub fn refine<E: Evaluator>(
    seed: &PipelineForest,
    program: &E::Program,
    backend: &E,
    config: &RefineConfig,
) -> Result<RefineOutcome, RefineError> {
    let (problem, seed_bits) = encode(seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallel.max(1))
        .build()
        .map_err(|e| RefineError::Pool(e.to_string()))?;
    let mut scorer = Scorer {
        backend,
        program,
        pool,
        known: HashMap::new(),
    };
    let seed_ic = scorer.score(std::slice::from_ref(seed))?[0];
    let seed_str = seed.to_pipeline_string();
    let k = problem.decision_points.len();

    let mut best: Option<(PipelineForest, Option<u64>, String)> = None;
    let mut consider = |forests: Vec<PipelineForest>, scores: Vec<Option<u64>>| {
        for (f, ic) in forests.into_iter().zip(scores) {
            let s = f.to_pipeline_string();
            let better_than_seed = match (ic, seed_ic) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if !better_than_seed {
                continue;
            }
            if best.as_ref().is_none_or(|(_, bic, bs)| improves((ic, &s), (*bic, bs))) {
                best = Some((f, ic, s));
            }
        }
    };

    if k > 0 {
        if problem.space_size() <= config.exhaustive_budget as u128 {
            let forests: Vec<PipelineForest> = (0..1u64 << k)
                .map(|mask| {
                    let bits: Chromosome = (0..k).map(|i| mask >> i & 1 == 1).collect();
                    decode(&problem, &bits).expect("length matches")
                })
                .collect();
            let scores = scorer.score(&forests)?;
            consider(forests, scores);
        } else {
            partition_ga(&problem, seed_bits, &mut scorer, config, &mut consider)?;
        }
    }

    let (forest, refined_ic) = match best {
        Some((f, ic, _)) => (f, ic),
        None => (seed.clone(), seed_ic),
    };
    let report = RefinementReport {
        seed_pipeline: seed_str,
        seed_ic,
        refined_pipeline: forest.to_pipeline_string(),
        refined_ic,
        decision_point_count: k,
        evaluations_used: scorer.known.len(),
    };
    Ok(RefineOutcome { forest, report })
}

fn partition_ga<E: Evaluator>(
    problem: &PartitionProblem,
    seed_bits: Chromosome,
    scorer: &mut Scorer<'_, E>,
    config: &RefineConfig,
    consider: &mut impl FnMut(Vec<PipelineForest>, Vec<Option<u64>>),
) -> Result<(), RefineError> {
    let k = seed_bits.len();
    let pop_size = config.population_size.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pop: Vec<Chromosome> = vec![seed_bits];
    while pop.len() < pop_size {
        pop.push((0..k).map(|_| rng.gen_bool(0.5)).collect());
    }
    let mutation = 1.0 / k as f64;
    for generation in 0..=config.generations {
        if generation > 0 {
            pop = breed(&pop, scorer, problem, pop_size, mutation, config.crossover_rate, &mut rng)?;
        }
        let forests: Vec<PipelineForest> = pop.iter().map(|c| decode(problem, c).expect("length matches")).collect();
        let scores = scorer.score(&forests)?;
        consider(forests, scores);
    }
    Ok(())
}

fn breed<E: Evaluator, R: Rng>(
    pop: &[Chromosome],
    scorer: &mut Scorer<'_, E>,
    problem: &PartitionProblem,
    size: usize,
    mutation: f64,
    crossover_rate: f64,
    rng: &mut R,
) -> Result<Vec<Chromosome>, RefineError> {
    let forests: Vec<PipelineForest> = pop.iter().map(|c| decode(problem, c).expect("length matches")).collect();
    let scores = scorer.score(&forests)?;
    let keyed: Vec<(Option<u64>, String)> = forests
        .iter()
        .zip(&scores)
        .map(|(f, s)| (*s, f.to_pipeline_string()))
        .collect();
    let fitter = |a: usize, b: usize| improves((keyed[a].0, &keyed[a].1), (keyed[b].0, &keyed[b].1));
    let elite = (0..pop.len()).fold(0, |best, i| if fitter(i, best) { i } else { best });
    let pick = |rng: &mut R| {
        let mut w = rng.gen_range(0..pop.len());
        for _ in 0..2 {
            let c = rng.gen_range(0..pop.len());
            if fitter(c, w) {
                w = c;
            }
        }
        w
    };
    let mut next = vec![pop[elite].clone()];
    while next.len() < size {
        let (mut x, mut y) = (pop[pick(rng)].clone(), pop[pick(rng)].clone());
        if x.len() > 1 && rng.gen_bool(crossover_rate) {
            let cut = rng.gen_range(1..x.len());
            for i in cut..x.len() {
                std::mem::swap(&mut x[i], &mut y[i]);
            }
        }
        for mut child in [x, y] {
            for bit in child.iter_mut() {
                if rng.gen_bool(mutation) {
                    *bit = !*bit;
                }
            }
            if next.len() < size {
                next.push(child);
            }
        }
    }
    Ok(next)
}
