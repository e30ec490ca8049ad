//! The `pipetune` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use serde::Serialize;

use crate::evaluation::{EvalError, EvaluationResult, Evaluator, MockEvaluator, MockProgram, OptConfig, OptEvaluator, OPT_ENV};
use crate::experiments::{run_microstructure_study, run_rq3_ablation, run_rq4_ablation, ExperimentError};
use crate::metrics::{aggregate, MetricsError, ProgramResult};
use crate::pipeline::{build_skeleton_variant, parse_pipeline, validate, PipelineForest, SkeletonError, TypedPass};
use crate::refinement::{refine, RefineConfig, RefineError};
use crate::registry::{PassRegistry, RegistryError};
use crate::search::{run_search, write_log, SearchConfig, SearchError};
use crate::synergy::{mine_synergies, GraphError, MiningError, MiningOptions, ProgramEntry, SynergyGraph};

#[derive(Debug, Parser)]
#[command(name = "pipetune", version, about = "Validate, evaluate and tune LLVM new-pass-manager pipelines")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Pass registry file (`name=level` per line); defaults to the built-in table.
    #[arg(long, global = true, value_name = "FILE")]
    registry: Option<PathBuf>,
    /// Backend used to measure instruction counts.
    #[arg(long, global = true, value_enum, default_value_t = EvaluatorKind::Opt)]
    evaluator: EvaluatorKind,
    /// Path to the `opt` executable.
    #[arg(long, global = true, env = OPT_ENV, value_name = "PATH")]
    opt_path: Option<PathBuf>,
    /// Per-invocation `opt` timeout in seconds.
    #[arg(long, global = true, default_value_t = 60.0)]
    timeout: f64,
    /// Maximum concurrent backend evaluations. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvaluatorKind {
    /// LLVM `opt` on `.ll`/`.bc` files.
    Opt,
    /// Synthetic JSON program specs.
    Mock,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a pipeline string against the nesting grammar.
    Validate { pipeline: String },
    /// Print a pipeline in canonical form.
    Fmt { pipeline: String },
    /// Mine pass-pair synergies over a directory of programs.
    Mine {
        dataset: PathBuf,
        /// Where to write the synergy graph.
        #[arg(long, short)]
        out: PathBuf,
        /// Progress file used to resume an interrupted run [default: <out>.checkpoint].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the genetic search on one program.
    Search {
        program: PathBuf,
        /// Synergy graph; without it the search picks passes blindly.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        params: SearchParams,
        /// Write the per-generation log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Re-partition a pipeline's structure without changing its pass order.
    Refine {
        program: PathBuf,
        pipeline: String,
        #[command(flatten)]
        params: RefineParams,
    },
    /// Apply a pipeline to a program and report the instruction count.
    Evaluate { program: PathBuf, pipeline: String },
    /// Summarize OverOz results, grouped by dataset.
    Report {
        /// JSON array of {program_id, dataset?, ic_oz, ic_tuned}.
        results: PathBuf,
        /// JSON object mapping program_id to a dataset label.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Instruction counts of the five nesting skeletons for four passes.
    SkeletonExperiment {
        program: PathBuf,
        #[arg(value_name = "MODULE_PASS")]
        module_pass: String,
        #[arg(value_name = "CGSCC_PASS")]
        cgscc_pass: String,
        #[arg(value_name = "FUNCTION_PASS")]
        function_pass: String,
        #[arg(value_name = "LOOP_PASS")]
        loop_pass: String,
    },
    /// Comparison experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// Structural variants of pass pairs (shared manager, siblings, stages).
    Microstructure {
        /// Program files or directories of programs.
        #[arg(required = true)]
        programs: Vec<PathBuf>,
        /// A pass pair `first,second`; repeatable.
        #[arg(long = "pair", required = true, value_name = "FIRST,SECOND")]
        pairs: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Graph-guided search against knowledge-blind search.
    Rq3 {
        program: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        params: SearchParams,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Main search alone against main search plus refinement.
    Rq4 {
        program: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        params: SearchParams,
        #[command(flatten)]
        refine: RefineParams,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
struct SearchParams {
    #[arg(long, default_value_t = 50)]
    population: usize,
    #[arg(long, default_value_t = 20)]
    generations: usize,
    #[arg(long, default_value_t = 24)]
    max_len: usize,
    #[arg(long, default_value_t = 0.9)]
    crossover: f64,
    #[arg(long, default_value_t = 0.3)]
    mutation: f64,
    #[arg(long, default_value_t = 3)]
    tournament: usize,
    #[arg(long, default_value_t = 1)]
    elitism: usize,
}

#[derive(Debug, Clone, Args)]
struct RefineParams {
    /// Largest partition space searched exhaustively.
    #[arg(long, default_value_t = 4096)]
    exhaustive_budget: u64,
    #[arg(long, default_value_t = 16)]
    refine_population: usize,
    #[arg(long, default_value_t = 10)]
    refine_generations: usize,
}

/// Exit status taxonomy: 1 invalid input, 2 environment, 3 evaluation failure.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
    fn env(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
    fn eval(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::BackendUnavailable(_) => CliError::env(e.to_string()),
            EvalError::InvalidPipeline(_) => CliError::input(e.to_string()),
            EvalError::Baseline(_) => CliError::eval(e.to_string()),
        }
    }
}

impl From<MiningError> for CliError {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::Eval(e) => e.into(),
            other => CliError::env(other.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Eval(e) => e.into(),
            SearchError::Pool(_) => CliError::env(e.to_string()),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Eval(e) => e.into(),
            RefineError::Pool(_) => CliError::env(e.to_string()),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Eval(e) => e.into(),
            ExperimentError::Search(e) => e.into(),
            ExperimentError::Refine(e) => e.into(),
        }
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<SkeletonError> for CliError {
    fn from(e: SkeletonError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::input(e.to_string())
    }
}

/// Program loading for a backend.
trait Backend: Evaluator {
    fn load(&self, path: &Path) -> Result<Self::Program, CliError>;
    fn is_program_file(&self, path: &Path) -> bool;
}

impl Backend for MockEvaluator {
    fn load(&self, path: &Path) -> Result<MockProgram, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        MockProgram::from_json(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    fn is_program_file(&self, path: &Path) -> bool {
        path.extension().is_some_and(|e| e == "json")
    }
}

impl Backend for OptEvaluator {
    fn load(&self, path: &Path) -> Result<PathBuf, CliError> {
        if !path.is_file() {
            return Err(CliError::input(format!("{}: no such IR file", path.display())));
        }
        Ok(path.to_path_buf())
    }

    fn is_program_file(&self, path: &Path) -> bool {
        path.extension().is_some_and(|e| e == "ll" || e == "bc")
    }
}

fn resolve_executable(path: &Path) -> Option<PathBuf> {
    if path.components().count() > 1 {
        return path.is_file().then(|| path.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|dirs| {
        std::env::split_paths(&dirs)
            .map(|d| d.join(path))
            .find(|p| p.is_file())
    })
}

fn opt_backend(cli: &Cli) -> Result<OptEvaluator, CliError> {
    let wanted = cli.opt_path.clone().unwrap_or_else(|| PathBuf::from("opt"));
    let opt_path = resolve_executable(&wanted).ok_or_else(|| {
        CliError::env(format!(
            "cannot find `{}`; pass --opt-path or set {OPT_ENV}",
            wanted.display()
        ))
    })?;
    if !(cli.timeout > 0.0 && cli.timeout.is_finite()) {
        return Err(CliError::input("--timeout must be a positive number of seconds"));
    }
    Ok(OptEvaluator::new(OptConfig {
        opt_path,
        timeout: Duration::from_secs_f64(cli.timeout),
    }))
}

macro_rules! with_backend {
    ($cli:expr, $b:ident => $body:expr) => {
        match $cli.evaluator {
            EvaluatorKind::Mock => {
                let $b = &MockEvaluator;
                $body
            }
            EvaluatorKind::Opt => {
                let owned = opt_backend($cli)?;
                let $b = &owned;
                $body
            }
        }
    };
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    run_from(std::env::args_os())
}

/// Parses `args` and runs the command, printing results and errors.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Output of a command that succeeded, in the requested format.
type Output = String;

fn emit<T: Serialize>(cli: &Cli, value: &T, text: impl FnOnce() -> String) -> Output {
    if cli.json {
        let mut s = serde_json::to_string_pretty(value).expect("output serializes");
        s.push('\n');
        s
    } else {
        text()
    }
}

fn load_registry(cli: &Cli) -> Result<PassRegistry, CliError> {
    match &cli.registry {
        None => Ok(PassRegistry::builtin()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            Ok(PassRegistry::load(&text)?)
        }
    }
}

fn load_graph(path: Option<&Path>) -> Result<SynergyGraph, CliError> {
    match path {
        None => Ok(SynergyGraph::empty()),
        Some(p) => SynergyGraph::load(p).map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
    }
}

fn parse_valid(text: &str, registry: &PassRegistry) -> Result<PipelineForest, CliError> {
    let forest = parse_pipeline(text, registry).map_err(|e| CliError::input(format!("invalid pipeline: {e}")))?;
    let report = validate(&forest, registry);
    if !report.is_valid() {
        return Err(EvalError::InvalidPipeline(report).into());
    }
    Ok(forest)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::env(format!("{}: {e}", path.display())))
}

fn search_config(cli: &Cli, p: &SearchParams) -> SearchConfig {
    SearchConfig {
        population_size: p.population,
        generations: p.generations,
        max_sequence_length: p.max_len,
        crossover_rate: p.crossover,
        mutation_rate: p.mutation,
        tournament_size: p.tournament,
        elitism: p.elitism,
        seed: cli.seed,
        parallel: cli.parallel,
    }
}

fn refine_config(cli: &Cli, p: &RefineParams) -> RefineConfig {
    RefineConfig {
        exhaustive_budget: p.exhaustive_budget,
        population_size: p.refine_population,
        generations: p.refine_generations,
        seed: cli.seed,
        parallel: cli.parallel,
        ..RefineConfig::default()
    }
}

fn execute(cli: &Cli) -> Result<Output, CliError> {
    let registry = load_registry(cli)?;
    match &cli.command {
        Command::Validate { pipeline } => cmd_validate(cli, &registry, pipeline),
        Command::Fmt { pipeline } => {
            let forest = parse_valid(pipeline, &registry)?;
            let s = forest.to_pipeline_string();
            Ok(emit(cli, &serde_json::json!({ "pipeline": s }), || format!("{s}\n")))
        }
        Command::Mine { dataset, out, checkpoint } => {
            with_backend!(cli, b => cmd_mine(cli, b, &registry, dataset, out, checkpoint.as_deref()))
        }
        Command::Search { program, graph, params, log } => {
            with_backend!(cli, b => cmd_search(cli, b, &registry, program, graph.as_deref(), params, log.as_deref()))
        }
        Command::Refine { program, pipeline, params } => {
            with_backend!(cli, b => cmd_refine(cli, b, &registry, program, pipeline, params))
        }
        Command::Evaluate { program, pipeline } => {
            with_backend!(cli, b => cmd_evaluate(cli, b, &registry, program, pipeline))
        }
        Command::Report { results, manifest } => cmd_report(cli, results, manifest.as_deref()),
        Command::SkeletonExperiment {
            program,
            module_pass,
            cgscc_pass,
            function_pass,
            loop_pass,
        } => {
            let passes = [module_pass.as_str(), cgscc_pass, function_pass, loop_pass];
            with_backend!(cli, b => cmd_skeleton(cli, b, &registry, program, passes))
        }
        Command::Experiment(exp) => with_backend!(cli, b => cmd_experiment(cli, b, &registry, exp)),
    }
}

#[derive(Serialize)]
struct Diagnostic {
    rule: Option<String>,
    message: String,
}

#[derive(Serialize)]
struct ValidateOutput {
    valid: bool,
    pipeline: Option<String>,
    violations: Vec<Diagnostic>,
}

fn cmd_validate(cli: &Cli, registry: &PassRegistry, text: &str) -> Result<Output, CliError> {
    let result = match parse_pipeline(text, registry) {
        Err(e) => ValidateOutput {
            valid: false,
            pipeline: None,
            violations: vec![Diagnostic {
                rule: e.rule().map(|r| r.to_string()),
                message: e.to_string(),
            }],
        },
        Ok(forest) => {
            let report = validate(&forest, registry);
            ValidateOutput {
                valid: report.is_valid(),
                pipeline: Some(forest.to_pipeline_string()),
                violations: report
                    .violations
                    .iter()
                    .map(|v| Diagnostic {
                        rule: v.rule.map(|r| r.to_string()),
                        message: v.to_string(),
                    })
                    .collect(),
            }
        }
    };
    if result.valid {
        return Ok(emit(cli, &result, || "valid\n".to_string()));
    }
    let message = if cli.json {
        serde_json::to_string_pretty(&result).expect("serializes")
    } else {
        let mut s = String::from("invalid pipeline");
        for v in &result.violations {
            let _ = write!(s, "\n  {}", v.message);
        }
        s
    };
    if cli.json {
        println!("{message}");
        return Err(CliError::input("invalid pipeline"));
    }
    Err(CliError::input(message))
}

fn collect_programs<B: Backend>(backend: &B, paths: &[PathBuf]) -> Result<Vec<ProgramEntry<B::Program>>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::env(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && backend.is_program_file(f))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(CliError::input(format!("{}: no such file or directory", p.display())));
        }
    }
    files
        .iter()
        .map(|f| {
            Ok(ProgramEntry {
                id: f
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                program: backend.load(f)?,
            })
        })
        .collect()
}

fn cmd_mine<B: Backend>(
    cli: &Cli,
    backend: &B,
    registry: &PassRegistry,
    dataset: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<Output, CliError> {
    if !dataset.is_dir() {
        return Err(CliError::env(format!("{}: not a directory", dataset.display())));
    }
    let programs = collect_programs(backend, &[dataset.to_path_buf()])?;
    if programs.is_empty() {
        return Err(CliError::env(format!("{}: no programs found", dataset.display())));
    }
    let checkpoint = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.checkpoint", out.display())));
    let options = MiningOptions {
        parallel: cli.parallel,
        checkpoint: Some(checkpoint.clone()),
    };
    let graph = mine_synergies(&programs, registry, backend, &options)?;
    graph.save(out).map_err(|e| match e {
        GraphError::Io { .. } => CliError::env(e.to_string()),
        other => CliError::input(other.to_string()),
    })?;
    if let Err(e) = fs::remove_file(&checkpoint) {
        warn!("could not remove checkpoint {}: {e}", checkpoint.display());
    }
    let summary = serde_json::json!({
        "programs": programs.len(),
        "nodes": graph.nodes().len(),
        "edges": graph.edges().len(),
        "out": out.display().to_string(),
    });
    Ok(emit(cli, &summary, || {
        format!(
            "mined {} programs: {} nodes, {} edges -> {}\n",
            programs.len(),
            graph.nodes().len(),
            graph.edges().len(),
            out.display()
        )
    }))
}

#[derive(Serialize)]
struct SearchOutput {
    original_ic: u64,
    best_pipeline: String,
    best_fitness: i64,
    best_ic: Option<u64>,
    evaluations: usize,
    log: Vec<crate::search::GenerationRecord>,
}

fn cmd_search<B: Backend>(
    cli: &Cli,
    backend: &B,
    registry: &PassRegistry,
    program: &Path,
    graph: Option<&Path>,
    params: &SearchParams,
    log_path: Option<&Path>,
) -> Result<Output, CliError> {
    let prog = backend.load(program)?;
    let graph = load_graph(graph)?;
    let out = run_search(&prog, &graph, registry, backend, &search_config(cli, params))?;
    if let Some(path) = log_path {
        let mut buf = Vec::new();
        write_log(&out.log, &mut buf).expect("writing to memory");
        write_file(path, &String::from_utf8(buf).expect("JSON is UTF-8"))?;
    }
    let result = SearchOutput {
        original_ic: out.original_ic,
        best_pipeline: out.best.forest.to_pipeline_string(),
        best_fitness: out.best.fitness.expect("evaluated"),
        best_ic: out.best_ic(),
        evaluations: out.evaluations,
        log: out.log,
    };
    Ok(emit(cli, &result, || {
        let ic = result.best_ic.map_or("failed".to_string(), |c| c.to_string());
        format!(
            "{}\nfitness {} (instructions {} -> {ic}, {} evaluations)\n",
            result.best_pipeline, result.best_fitness, result.original_ic, result.evaluations
        )
    }))
}

fn cmd_refine<B: Backend>(
    cli: &Cli,
    backend: &B,
    registry: &PassRegistry,
    program: &Path,
    pipeline: &str,
    params: &RefineParams,
) -> Result<Output, CliError> {
    let prog = backend.load(program)?;
    let seed = parse_valid(pipeline, registry)?;
    let out = refine(&seed, &prog, backend, &refine_config(cli, params))?;
    let r = out.report;
    Ok(emit(cli, &r, || {
        let show = |v: Option<u64>| v.map_or("failed".to_string(), |c| c.to_string());
        format!(
            "seed     {}  {}\nrefined  {}  {}\ndecision points {}, evaluations {}\n",
            show(r.seed_ic),
            r.seed_pipeline,
            show(r.refined_ic),
            r.refined_pipeline,
            r.decision_point_count,
            r.evaluations_used
        )
    }))
}

fn cmd_evaluate<B: Backend>(
    cli: &Cli,
    backend: &B,
    registry: &PassRegistry,
    program: &Path,
    pipeline: &str,
) -> Result<Output, CliError> {
    let prog = backend.load(program)?;
    let forest = parse_valid(pipeline, registry)?;
    let original = backend.original_count(&prog)?;
    match backend.run(&prog, &forest)? {
        EvaluationResult::Ok { instruction_count } => {
            let v = serde_json::json!({
                "pipeline": forest.to_pipeline_string(),
                "original_ic": original,
                "instruction_count": instruction_count,
            });
            Ok(emit(cli, &v, || format!("{instruction_count}\n")))
        }
        EvaluationResult::Failed { detail } => Err(CliError::eval(format!("evaluation failed: {detail}"))),
    }
}

#[derive(Serialize)]
struct ProgramLine {
    program_id: String,
    dataset: Option<String>,
    ic_oz: u64,
    ic_tuned: u64,
    overoz_pct: f64,
}

fn cmd_report(cli: &Cli, results: &Path, manifest: Option<&Path>) -> Result<Output, CliError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())));
    let mut rows: Vec<ProgramResult> =
        serde_json::from_str(&read(results)?).map_err(|e| CliError::input(format!("{}: {e}", results.display())))?;
    if let Some(m) = manifest {
        let labels: std::collections::BTreeMap<String, String> =
            serde_json::from_str(&read(m)?).map_err(|e| CliError::input(format!("{}: {e}", m.display())))?;
        for r in &mut rows {
            if let Some(label) = labels.get(&r.program_id) {
                r.dataset = Some(label.clone());
            }
        }
    }
    let report = aggregate(&rows)?;
    let programs: Vec<ProgramLine> = rows
        .iter()
        .map(|r| ProgramLine {
            program_id: r.program_id.clone(),
            dataset: r.dataset.clone(),
            ic_oz: r.ic_oz,
            ic_tuned: r.ic_tuned,
            overoz_pct: r.overoz_pct().expect("checked by aggregate"),
        })
        .collect();
    let v = serde_json::json!({ "programs": programs, "summary": report });
    Ok(emit(cli, &v, || {
        let mut s = String::new();
        for p in &programs {
            let _ = writeln!(s, "{:<24}  {:>8} -> {:<8}  {:>7.2}%", p.program_id, p.ic_oz, p.ic_tuned, p.overoz_pct);
        }
        s.push('\n');
        s.push_str(&report.to_table());
        s
    }))
}

#[derive(Serialize)]
struct SkeletonRow {
    variant: u8,
    pipeline: String,
    instruction_count: Option<u64>,
}

fn cmd_skeleton<B: Backend>(
    cli: &Cli,
    backend: &B,
    registry: &PassRegistry,
    program: &Path,
    [m, c, f, l]: [&str; 4],
) -> Result<Output, CliError> {
    let prog = backend.load(program)?;
    let mut rows = Vec::new();
    for variant in 1..=5u8 {
        let forest = build_skeleton_variant(variant, m, c, f, l, registry)?;
        let res = backend.run(&prog, &forest)?;
        rows.push(SkeletonRow {
            variant,
            pipeline: forest.to_pipeline_string(),
            instruction_count: res.instruction_count(),
        });
    }
    let best = rows.iter().filter_map(|r| r.instruction_count).min();
    Ok(emit(cli, &serde_json::json!({ "rows": rows }), || {
        let mut s = String::new();
        for r in &rows {
            let ic = r.instruction_count.map_or("failed".to_string(), |c| c.to_string());
            let mark = if r.instruction_count.is_some() && r.instruction_count == best { " *" } else { "" };
            let _ = writeln!(s, "{}  {:>8}{mark:<2}  {}", r.variant, ic, r.pipeline);
        }
        s
    }))
}

fn write_artifacts(dir: Option<&Path>, name: &str, json: &impl Serialize, table: &str) -> Result<(), CliError> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).map_err(|e| CliError::env(format!("{}: {e}", dir.display())))?;
    write_file(
        &dir.join(format!("{name}.json")),
        &serde_json::to_string_pretty(json).expect("serializes"),
    )?;
    write_file(&dir.join(format!("{name}.txt")), table)
}

fn cmd_experiment<B: Backend>(
    cli: &Cli,
    backend: &B,
    registry: &PassRegistry,
    exp: &ExperimentCommand,
) -> Result<Output, CliError> {
    match exp {
        ExperimentCommand::Microstructure { programs, pairs, out_dir } => {
            let mut typed = Vec::new();
            for spec in pairs {
                let (a, b) = spec
                    .split_once(',')
                    .ok_or_else(|| CliError::input(format!("pair `{spec}` must look like `first,second`")))?;
                let (a, b) = (a.trim(), b.trim());
                typed.push((
                    TypedPass::new(a, registry.level_of(a)?),
                    TypedPass::new(b, registry.level_of(b)?),
                ));
            }
            let entries = collect_programs(backend, programs)?;
            if entries.is_empty() {
                return Err(CliError::env("no programs found"));
            }
            let study = run_microstructure_study(&typed, &entries, backend)?;
            let table = study.to_table();
            write_artifacts(out_dir.as_deref(), "microstructure", &study, &table)?;
            Ok(emit(cli, &study, || table))
        }
        ExperimentCommand::Rq3 {
            program,
            graph,
            params,
            out_dir,
        } => {
            let prog = backend.load(program)?;
            let graph = load_graph(Some(graph))?;
            let r = run_rq3_ablation(&prog, &graph, registry, backend, &search_config(cli, params))?;
            let table = r.to_table();
            write_artifacts(out_dir.as_deref(), "rq3", &r, &table)?;
            Ok(emit(cli, &r, || table))
        }
        ExperimentCommand::Rq4 {
            program,
            graph,
            params,
            refine: rp,
            out_dir,
        } => {
            let prog = backend.load(program)?;
            let graph = load_graph(graph.as_deref())?;
            let r = run_rq4_ablation(
                &prog,
                &graph,
                registry,
                backend,
                &search_config(cli, params),
                &refine_config(cli, rp),
            )?;
            let table = r.to_table();
            write_artifacts(out_dir.as_deref(), "rq4", &r, &table)?;
            Ok(emit(cli, &r, || table))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn resolves_executables() {
        assert!(resolve_executable(Path::new("sh")).is_some());
        assert!(resolve_executable(Path::new("/definitely/not/here")).is_none());
        assert!(resolve_executable(Path::new("no-such-binary-xyz")).is_none());
    }
}
