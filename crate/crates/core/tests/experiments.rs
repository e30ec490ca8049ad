mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use pipetune::evaluation::mock::{MockFunction, MockSpec, PairBonus};
use pipetune::evaluation::{EvalError, EvaluationResult, Evaluator, MockEvaluator, MockProgram};
use pipetune::experiments::run_rq3_ablation;
use pipetune::search::SearchConfig;
use pipetune::synergy::{mine_synergies, EdgeType, GraphMeta, MiningOptions, ProgramEntry, SynergyEdge, SynergyGraph};
use pipetune::{PassInfo, PassLevel, PassRegistry, PipelineForest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn m1() -> MockSpec {
    MockSpec {
        functions: vec![MockFunction { name: "f1".into(), base_ic: 100 }],
        effects: [("a".to_string(), 10), ("b".to_string(), 5)].into(),
        pair_synergy: vec![PairBonus { p: "a".into(), q: "b".into(), bonus: 3 }],
        ..Default::default()
    }
}

#[test]
fn graph_guidance_helps_on_planted_synergy() {
    // The two useful passes hide among the built-in ones, which do nothing here.
    let mut registry = PassRegistry::builtin();
    registry.insert(PassInfo::new("a", PassLevel::Function)).unwrap();
    registry.insert(PassInfo::new("b", PassLevel::Function)).unwrap();
    let graph = SynergyGraph::from_parts(
        vec![SynergyEdge { from: "a".into(), to: "b".into(), edge_type: EdgeType::IntraLevel, weight: 1.0 }],
        BTreeMap::from([("a".to_string(), 1.0)]),
        GraphMeta::default(),
    )
    .unwrap();
    let prog = MockProgram::new(m1()).unwrap();
    let mut wins = 0;
    for seed in 0..50 {
        let config = SearchConfig {
            population_size: 4,
            generations: 2,
            max_sequence_length: 4,
            seed,
            ..Default::default()
        };
        let r = run_rq3_ablation(&prog, &graph, &registry, &MockEvaluator, &config).unwrap();
        if r.guided_best_fitness >= r.unguided_best_fitness {
            wins += 1;
        }
    }
    assert!(wins >= 40, "guided matched or beat blind search in {wins}/50 seeds");
}

#[test]
fn rq3_on_inert_program_finds_nothing() {
    let registry = PassRegistry::from_pairs([("a", PassLevel::Function), ("b", PassLevel::Function)]);
    let spec = MockSpec {
        functions: vec![MockFunction { name: "f".into(), base_ic: 40 }],
        ..Default::default()
    };
    let prog = MockProgram::new(spec).unwrap();
    let config = SearchConfig { population_size: 6, generations: 3, ..Default::default() };
    let r = run_rq3_ablation(&prog, &SynergyGraph::empty(), &registry, &MockEvaluator, &config).unwrap();
    assert_eq!((r.guided_best_fitness, r.unguided_best_fitness), (0, 0));
    let again = run_rq3_ablation(&prog, &SynergyGraph::empty(), &registry, &MockEvaluator, &config).unwrap();
    assert_eq!(r, again);
}

/// Mock backend that can be made to fail as if the machine went away.
struct Flaky {
    inner: MockEvaluator,
    calls: AtomicUsize,
}

struct FlakyProgram {
    program: MockProgram,
    broken: bool,
}

impl Evaluator for Flaky {
    type Program = FlakyProgram;

    fn original_count(&self, p: &FlakyProgram) -> Result<u64, EvalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if p.broken {
            return Err(EvalError::BackendUnavailable("lost".into()));
        }
        self.inner.original_count(&p.program)
    }

    fn run(&self, p: &FlakyProgram, forest: &PipelineForest) -> Result<EvaluationResult, EvalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.run(&p.program, forest)
    }
}

#[test]
fn interrupted_mining_resumes_to_the_same_graph() {
    let registry = common::small_registry();
    let passes = pipetune::synergy::mining_passes(&registry);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let specs: Vec<MockSpec> = (0..4).map(|i| common::random_mock(&mut rng, &passes, i % 2 == 0)).collect();
    let dataset = |broken_from: usize| -> Vec<ProgramEntry<FlakyProgram>> {
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| ProgramEntry {
                id: format!("p{i}"),
                program: FlakyProgram { program: common::program(s), broken: i >= broken_from },
            })
            .collect()
    };

    let plain: Vec<ProgramEntry<MockProgram>> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| ProgramEntry { id: format!("p{i}"), program: common::program(s) })
        .collect();
    let reference = mine_synergies(&plain, &registry, &MockEvaluator, &MiningOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let options = MiningOptions { parallel: 2, checkpoint: Some(dir.path().join("ckpt.json")) };
    let backend = Flaky { inner: MockEvaluator, calls: AtomicUsize::new(0) };
    assert!(mine_synergies(&dataset(2), &registry, &backend, &options).is_err());
    assert!(dir.path().join("ckpt.json").is_file());

    let backend = Flaky { inner: MockEvaluator, calls: AtomicUsize::new(0) };
    let resumed = mine_synergies(&dataset(usize::MAX), &registry, &backend, &options).unwrap();
    let n = passes.len();
    assert_eq!(backend.calls.load(Ordering::SeqCst), 2 * (n * n + n + 1), "only the unfinished programs rerun");
    assert_eq!(resumed, reference);

    // A checkpoint from another registry is ignored.
    let mut other = common::small_registry();
    other.insert(PassInfo::new("extra", PassLevel::Function)).unwrap();
    let fresh = mine_synergies(&dataset(usize::MAX), &other, &backend, &options).unwrap();
    let expected = mine_synergies(&plain, &other, &MockEvaluator, &MiningOptions::default()).unwrap();
    assert_eq!(fresh, expected);
}
