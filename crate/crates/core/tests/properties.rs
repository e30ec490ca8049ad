mod common;

use pipetune::evaluation::{MockEvaluator, MockProgram};
use pipetune::evaluation::mock::{MockFunction, MockSpec, PairBonus};
use pipetune::pipeline::random::{random_forest, ForestBounds, PassPool};
use pipetune::pipeline::{build_skeleton_variant, validate};
use pipetune::refinement::{decision_points, decode, encode, refine, RefineConfig};
use pipetune::search::{run_search, SearchConfig};
use pipetune::synergy::{mine_program, mine_synergies, mining_passes, MiningOptions, ProgramEntry, SynergyGraph};
use pipetune::{PassLevel, PassRegistry, PipelineNode, TypedPass};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn all_passes(registry: &PassRegistry) -> Vec<TypedPass> {
    registry
        .concrete_passes()
        .into_iter()
        .map(|(n, l)| TypedPass::new(n, l))
        .collect()
}

fn small_bounds() -> ForestBounds {
    ForestBounds {
        max_trees: 3,
        max_depth: 4,
        max_width: 4,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn printed_form_round_trips(seed in any::<u64>()) {
        let registry = PassRegistry::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = random_forest(&PassPool::from_registry(&registry), ForestBounds::default(), &mut rng).unwrap();
        let text = forest.to_pipeline_string();
        prop_assert!(!text.contains(char::is_whitespace));
        let mut depth = 0i32;
        for c in text.chars() {
            depth += match c { '(' => 1, ')' => -1, _ => 0 };
            prop_assert!(depth >= 0);
        }
        prop_assert_eq!(depth, 0);
        prop_assert_eq!(parse(&text, &registry), forest);
    }

    #[test]
    fn simulator_matches_reference(seed in any::<u64>()) {
        let registry = small_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = random_forest(&PassPool::from_registry(&registry), small_bounds(), &mut rng).unwrap();
        let spec = random_mock(&mut rng, &all_passes(&registry), true);
        let prog = program(&spec);
        prop_assert_eq!(prog.simulate(&forest), oracle_count(&spec, &forest));
        prop_assert_eq!(prog.simulate(&forest), prog.simulate(&forest));
    }

    #[test]
    fn inert_pass_changes_nothing(seed in any::<u64>()) {
        let mut registry = small_registry();
        for (name, level) in [("zm", PassLevel::Module), ("zc", PassLevel::Cgscc), ("zf", PassLevel::Function), ("zl", PassLevel::Loop)] {
            registry.insert(pipetune::PassInfo::new(name, level)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = PassPool::from_registry(&small_registry());
        let forest = random_forest(&pool, small_bounds(), &mut rng).unwrap();
        let spec = random_mock(&mut rng, &all_passes(&small_registry()), true);
        let prog = program(&spec);

        let managers = forest.manager_paths();
        let path = managers[rng.gen_range(0..managers.len())].clone();
        let level = forest.node(&path).unwrap().level();
        let name = match level {
            PassLevel::Module => "zm",
            PassLevel::Cgscc => "zc",
            PassLevel::Function => "zf",
            PassLevel::Loop => "zl",
        };
        let mut grown = forest.clone();
        if let PipelineNode::Manager { children, .. } = grown.node_mut(&path).unwrap() {
            let at = rng.gen_range(0..=children.len());
            children.insert(at, PipelineNode::leaf(name, level));
        }
        prop_assert!(validate(&grown, &registry).is_valid());
        prop_assert_eq!(prog.simulate(&grown), prog.simulate(&forest));
    }

    #[test]
    fn splitting_module_from_function_block_is_neutral(seed in any::<u64>()) {
        let registry = small_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_mock(&mut rng, &all_passes(&registry), true);
        let prog = program(&spec);
        for m in ["m1", "m2"] {
            for f in ["f1", "f2"] {
                let joined = parse(&format!("module({m},function({f}))"), &registry);
                let split = parse(&format!("module({m}),module(function({f}))"), &registry);
                prop_assert_eq!(prog.simulate(&joined), prog.simulate(&split));
            }
        }
    }

    #[test]
    fn partition_codec_round_trips(seed in any::<u64>()) {
        let registry = small_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.gen_range(1..14);
        let seq = random_sequence(&mut rng, &registry, len);
        let problem = decision_points(&seq).unwrap();
        prop_assert_eq!(problem.decision_points.len(), same_level_boundaries(&seq));
        let bits: Vec<bool> = (0..problem.decision_points.len()).map(|_| rng.gen_bool(0.5)).collect();
        let forest = decode(&problem, &bits).unwrap();
        prop_assert!(validate(&forest, &registry).is_valid());
        prop_assert_eq!(forest.leaf_sequence(), seq.clone());
        prop_assert_eq!(forest.to_pipeline_string(), oracle_partition(&seq, &bits));
        let (again, back) = encode(&forest).unwrap();
        prop_assert_eq!(again, problem);
        prop_assert_eq!(back, bits);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn refinement_keeps_order_and_never_regresses(seed in any::<u64>(), budget in prop_oneof![Just(1u64), Just(4096u64)]) {
        let registry = small_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = random_forest(&PassPool::from_registry(&registry), small_bounds(), &mut rng).unwrap();
        let spec = random_mock(&mut rng, &all_passes(&registry), true);
        let prog = program(&spec);
        // A budget of 1 forces the partition GA whenever there is a choice to make.
        let config = RefineConfig { exhaustive_budget: budget, seed, ..Default::default() };
        let out = refine(&forest, &prog, &MockEvaluator, &config).unwrap();
        prop_assert_eq!(out.forest.leaf_sequence(), forest.leaf_sequence());
        prop_assert!(validate(&out.forest, &registry).is_valid());
        let before = prog.simulate(&forest);
        let after = prog.simulate(&out.forest);
        prop_assert!(after <= before, "{} -> {}", before, after);
        prop_assert_eq!(out.report.seed_ic, Some(before));
        prop_assert_eq!(out.report.refined_ic, Some(after));
    }

    #[test]
    fn search_is_reproducible_and_valid(seed in any::<u64>()) {
        let registry = small_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_mock(&mut rng, &all_passes(&registry), true);
        let prog = program(&spec);
        let config = SearchConfig {
            population_size: 8,
            generations: 4,
            max_sequence_length: 8,
            seed,
            ..Default::default()
        };
        let a = run_search(&prog, &SynergyGraph::empty(), &registry, &MockEvaluator, &config).unwrap();
        let b = run_search(&prog, &SynergyGraph::empty(), &registry, &MockEvaluator, &SearchConfig { parallel: 3, ..config.clone() }).unwrap();
        prop_assert_eq!(a.best.forest.to_pipeline_string(), b.best.forest.to_pipeline_string());
        prop_assert_eq!(&a.log, &b.log);
        prop_assert!(validate(&a.best.forest, &registry).is_valid());
        prop_assert!(a.best.forest.leaf_count() <= 8);
        for w in a.log.windows(2) {
            prop_assert!(w[0].best_fitness <= w[1].best_fitness);
        }
        for r in &a.log {
            prop_assert!(validate(&parse(&r.best_pipeline_string, &registry), &registry).is_valid());
        }
        prop_assert_eq!(
            a.best.fitness,
            Some(prog.original_count() as i64 - prog.simulate(&a.best.forest) as i64)
        );
    }

    #[test]
    fn mining_budget_and_order_independence(seed in any::<u64>()) {
        let registry = small_registry();
        let passes = mining_passes(&registry);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs: Vec<MockSpec> = (0..3).map(|_| random_mock(&mut rng, &passes, true)).collect();
        let found = mine_program(&program(&specs[0]), &passes, &MockEvaluator, 2).unwrap();
        let n = passes.len();
        prop_assert_eq!(found.evaluations, n * n + n + 1);

        let entries = |order: &[usize]| -> Vec<ProgramEntry<MockProgram>> {
            order.iter().map(|&i| ProgramEntry { id: format!("p{i}"), program: program(&specs[i]) }).collect()
        };
        let g1 = mine_synergies(&entries(&[0, 1, 2]), &registry, &MockEvaluator, &MiningOptions::default()).unwrap();
        let g2 = mine_synergies(&entries(&[2, 0, 1]), &registry, &MockEvaluator, &MiningOptions::default()).unwrap();
        prop_assert_eq!(g1.edges(), g2.edges());
        prop_assert_eq!(g1.start_weights(), g2.start_weights());
    }
}

#[test]
fn skeleton_variants_keep_pass_order() {
    let registry = PassRegistry::builtin();
    for (m, c, f, l) in [("globalopt", "inline", "gvn", "loop-deletion"), ("strip", "inline", "adce", "licm")] {
        let first = build_skeleton_variant(1, m, c, f, l, &registry).unwrap().leaf_sequence();
        for v in 2..=5 {
            let forest = build_skeleton_variant(v, m, c, f, l, &registry).unwrap();
            assert!(validate(&forest, &registry).is_valid());
            assert_eq!(forest.leaf_sequence(), first, "variant {v}");
        }
    }
}

#[test]
fn representative_skeletons_match_the_table() {
    let registry = small_registry();
    let passes = all_passes(&registry);
    for p in &passes {
        for q in &passes {
            let built = pipetune::synergy::build_representative_skeleton(p, q);
            assert_eq!(built.to_pipeline_string(), oracle_pair_skeleton(p, q), "{} then {}", p.name, q.name);
        }
    }
}

#[test]
fn recording_is_asymmetric() {
    let registry = PassRegistry::from_pairs([("a", PassLevel::Function), ("b", PassLevel::Function)]);
    let spec = MockSpec {
        functions: vec![MockFunction { name: "f".into(), base_ic: 100 }],
        effects: [("a".to_string(), 10), ("b".to_string(), 5)].into(),
        pair_synergy: vec![PairBonus { p: "a".into(), q: "b".into(), bonus: 3 }],
        ..Default::default()
    };
    let entry = ProgramEntry { id: "m1".into(), program: program(&spec) };
    let g = mine_synergies(&[entry], &registry, &MockEvaluator, &MiningOptions::default()).unwrap();
    assert!(g.edge("a", "b").is_some());
    assert!(g.edge("b", "a").is_none());
}
