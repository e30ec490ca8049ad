//! Structure-aware genetic search over pipeline forests.

use std::collections::HashMap;
use std::io::{self, Write};

use log::debug;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{EvalError, Evaluator};
use crate::pipeline::PipelineForest;
use crate::registry::PassRegistry;
use crate::synergy::SynergyGraph;

mod operators;

pub use operators::{crossover, draw_start, mutate, place_after, swap_subtrees, trim, weighted_walk_init};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub population_size: usize,
    pub generations: usize,
    pub max_sequence_length: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub elitism: usize,
    pub seed: u64,
    /// Concurrent fitness evaluations. Does not affect results.
    #[serde(default)]
    pub parallel: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: 50,
            generations: 20,
            max_sequence_length: 24,
            crossover_rate: 0.9,
            mutation_rate: 0.3,
            tournament_size: 3,
            elitism: 1,
            seed: 0,
            parallel: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("registry has no pass with a fixed level")]
    NoPasses,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.population_size == 0 {
            return bad("population_size must be at least 1");
        }
        if self.max_sequence_length == 0 {
            return bad("max_sequence_length must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be at least 1");
        }
        if self.elitism > self.population_size {
            return bad("elitism cannot exceed population_size");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Individual {
    pub forest: PipelineForest,
    /// `IC_orig - IC`; `None` until evaluated.
    pub fitness: Option<i64>,
}

impl Individual {
    pub fn new(forest: PipelineForest) -> Self {
        Individual { forest, fitness: None }
    }
}

/// One line of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best fitness seen so far, over all generations.
    pub best_fitness: i64,
    pub mean_fitness: f64,
    pub best_pipeline_string: String,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Individual,
    pub original_ic: u64,
    pub log: Vec<GenerationRecord>,
    /// Backend calls made, after de-duplication.
    pub evaluations: usize,
}

impl SearchOutcome {
    pub fn best_ic(&self) -> Option<u64> {
        let fit = self.best.fitness?;
        (fit >= -(self.original_ic as i64)).then(|| (self.original_ic as i64 - fit) as u64)
    }
}

/// Writes the log as line-delimited JSON.
pub fn write_log(log: &[GenerationRecord], mut sink: impl Write) -> io::Result<()> {
    for rec in log {
        serde_json::to_writer(&mut sink, rec)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Fitness assigned to a failed evaluation: below any real outcome.
pub fn failed_fitness(original_ic: u64) -> i64 {
    -(original_ic as i64) - 1
}

/// Higher fitness wins; ties go to the smaller pipeline string.
fn better(a: (i64, &str), b: (i64, &str)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

struct FitnessCache<'a, E: Evaluator> {
    backend: &'a E,
    program: &'a E::Program,
    original_ic: u64,
    known: HashMap<String, i64>,
    calls: usize,
}

impl<E: Evaluator> FitnessCache<'_, E> {
    fn fill(&mut self, pop: &mut [Individual], pool: &rayon::ThreadPool) -> Result<(), EvalError> {
        let mut pending: Vec<(String, &PipelineForest)> = Vec::new();
        for ind in pop.iter() {
            let key = ind.forest.to_pipeline_string();
            if !self.known.contains_key(&key) && !pending.iter().any(|(k, _)| *k == key) {
                pending.push((key, &ind.forest));
            }
        }
        let (backend, program, orig) = (self.backend, self.program, self.original_ic);
        let results: Vec<Result<i64, EvalError>> = pool.install(|| {
            pending
                .par_iter()
                .map(|(_, f)| {
                    backend.run(program, f).map(|r| match r.instruction_count() {
                        Some(ic) => orig as i64 - ic as i64,
                        None => failed_fitness(orig),
                    })
                })
                .collect()
        });
        self.calls += pending.len();
        let keys: Vec<String> = pending.into_iter().map(|(k, _)| k).collect();
        for (key, res) in keys.into_iter().zip(results) {
            self.known.insert(key, res?);
        }
        for ind in pop.iter_mut() {
            ind.fitness = Some(self.known[&ind.forest.to_pipeline_string()]);
        }
        Ok(())
    }
}

fn tournament<'p, R: Rng + ?Sized>(pop: &'p [(Individual, String)], size: usize, rng: &mut R) -> &'p Individual {
    let mut best = &pop[rng.gen_range(0..pop.len())];
    for _ in 1..size {
        let c = &pop[rng.gen_range(0..pop.len())];
        if better((c.0.fitness.unwrap(), &c.1), (best.0.fitness.unwrap(), &best.1)) {
            best = c;
        }
    }
    &best.0
}

/// Runs the genetic search on one program.
///
/// All random choices come from one stream seeded by `config.seed` and are
/// made in a fixed order; evaluation may run in parallel without changing
/// the outcome.
pub fn run_search<E: Evaluator>(
    program: &E::Program,
    graph: &SynergyGraph,
    registry: &PassRegistry,
    backend: &E,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    if registry.concrete_passes().is_empty() {
        return Err(SearchError::NoPasses);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallel.max(1))
        .build()
        .map_err(|e| SearchError::Pool(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let original_ic = backend.original_count(program)?;
    let mut cache = FitnessCache {
        backend,
        program,
        original_ic,
        known: HashMap::new(),
        calls: 0,
    };

    let max_len = config.max_sequence_length;
    let mut population: Vec<Individual> = (0..config.population_size)
        .map(|_| Individual::new(weighted_walk_init(graph, registry, max_len, &mut rng).expect("registry has passes")))
        .collect();

    let mut best: Option<(Individual, String)> = None;
    let mut log = Vec::new();
    for generation in 0..=config.generations {
        if generation > 0 {
            population = next_generation(&population, graph, registry, config, &mut rng);
        }
        cache.fill(&mut population, &pool)?;

        let mut ranked: Vec<(Individual, String)> = population
            .iter()
            .map(|i| (i.clone(), i.forest.to_pipeline_string()))
            .collect();
        ranked.sort_by(|a, b| {
            b.0.fitness
                .cmp(&a.0.fitness)
                .then_with(|| a.1.cmp(&b.1))
        });
        let top = &ranked[0];
        if best
            .as_ref()
            .is_none_or(|(b, s)| better((top.0.fitness.unwrap(), &top.1), (b.fitness.unwrap(), s)))
        {
            best = Some(top.clone());
        }
        let (b, s) = best.as_ref().unwrap();
        let mean = population.iter().map(|i| i.fitness.unwrap() as f64).sum::<f64>() / population.len() as f64;
        debug!("generation {generation}: best {} mean {mean:.2}", b.fitness.unwrap());
        log.push(GenerationRecord {
            generation,
            best_fitness: b.fitness.unwrap(),
            mean_fitness: mean,
            best_pipeline_string: s.clone(),
        });
        population = ranked.into_iter().map(|(i, _)| i).collect();
    }

    Ok(SearchOutcome {
        best: best.unwrap().0,
        original_ic,
        log,
        evaluations: cache.calls,
    })
}

/// Builds the next population from one sorted by rank.
fn next_generation<R: Rng + ?Sized>(
    ranked: &[Individual],
    graph: &SynergyGraph,
    registry: &PassRegistry,
    config: &SearchConfig,
    rng: &mut R,
) -> Vec<Individual> {
    let keyed: Vec<(Individual, String)> = ranked
        .iter()
        .map(|i| (i.clone(), i.forest.to_pipeline_string()))
        .collect();
    let mut next: Vec<Individual> = ranked[..config.elitism].to_vec();
    while next.len() < config.population_size {
        let a = tournament(&keyed, config.tournament_size, rng);
        let b = tournament(&keyed, config.tournament_size, rng);
        let (mut x, mut y) = (a.forest.clone(), b.forest.clone());
        if rng.gen_bool(config.crossover_rate) {
            if let Some((c, d)) = crossover(&x, &y, registry, rng) {
                x = c;
                y = d;
            }
        }
        for mut child in [x, y] {
            if rng.gen_bool(config.mutation_rate) {
                child = mutate(&child, graph, registry, rng);
            }
            trim(&mut child, config.max_sequence_length);
            if next.len() < config.population_size {
                next.push(Individual::new(child));
            }
        }
    }
    next
}
