//! Desk-scale experiments: structural variants of pass pairs, guided versus
//! knowledge-blind search, and the effect of the refinement stage.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::evaluation::{EvalError, Evaluator};
use crate::pipeline::{minimal_wrap, nest_under, wrap_block, PipelineForest, PipelineNode, TypedPass};
use crate::refinement::{refine, RefineConfig, RefineError, RefinementReport};
use crate::registry::{PassLevel, PassRegistry};
use crate::search::{run_search, GenerationRecord, SearchConfig, SearchError};
use crate::synergy::{build_representative_skeleton, classify_synergy_type, EdgeType, ProgramEntry, SynergyGraph};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

/// Named structural variants of one pass pair.
///
/// Same-level pairs: one shared manager (`micro`), sibling managers in one
/// tree (`meso`), separate trees (`macro`). Cross-level pairs: the nested
/// representative skeleton and the two-stage phased form.
pub fn pair_variants(p1: &TypedPass, p2: &TypedPass) -> Vec<(&'static str, PipelineForest)> {
    let leaf = |p: &TypedPass| PipelineNode::leaf(&p.name, p.level);
    let phased = PipelineForest::new(vec![minimal_wrap(&p1.name, p1.level), minimal_wrap(&p2.name, p2.level)]);
    match classify_synergy_type(p1.level, p2.level) {
        EdgeType::IntraLevel => {
            let level = p1.level;
            let micro = PipelineForest::new(vec![wrap_block(level, vec![leaf(p1), leaf(p2)])]);
            let meso = PipelineForest::new(vec![PipelineNode::manager(
                PassLevel::Module,
                vec![
                    nest_under(PassLevel::Module, level, vec![leaf(p1)]),
                    nest_under(PassLevel::Module, level, vec![leaf(p2)]),
                ],
            )]);
            vec![("micro", micro), ("meso", meso), ("macro", phased)]
        }
        EdgeType::InterLevel => vec![("nested", build_representative_skeleton(p1, p2)), ("phased", phased)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantCount {
    pub variant: String,
    pub pipeline: String,
    pub instruction_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroRow {
    pub program: String,
    pub first: String,
    pub second: String,
    pub edge_type: EdgeType,
    pub variants: Vec<VariantCount>,
    /// All variants evaluated and produced the same count.
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroStudy {
    pub rows: Vec<MicroRow>,
    pub agreement_fraction: f64,
}

pub fn run_microstructure_study<E: Evaluator>(
    pairs: &[(TypedPass, TypedPass)],
    programs: &[ProgramEntry<E::Program>],
    backend: &E,
) -> Result<MicroStudy, ExperimentError> {
    let mut rows = Vec::new();
    for entry in programs {
        for (p1, p2) in pairs {
            let mut variants = Vec::new();
            for (name, forest) in pair_variants(p1, p2) {
                let res = backend.run(&entry.program, &forest)?;
                variants.push(VariantCount {
                    variant: name.to_string(),
                    pipeline: forest.to_pipeline_string(),
                    instruction_count: res.instruction_count(),
                });
            }
            let first = variants[0].instruction_count;
            let agree = first.is_some() && variants.iter().all(|v| v.instruction_count == first);
            rows.push(MicroRow {
                program: entry.id.clone(),
                first: p1.name.clone(),
                second: p2.name.clone(),
                edge_type: classify_synergy_type(p1.level, p2.level),
                variants,
                agree,
            });
        }
    }
    let agreement_fraction = if rows.is_empty() {
        0.0
    } else {
        rows.iter().filter(|r| r.agree).count() as f64 / rows.len() as f64
    };
    Ok(MicroStudy { rows, agreement_fraction })
}

impl MicroStudy {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let cells: Vec<String> = r
                .variants
                .iter()
                .map(|v| {
                    let ic = v.instruction_count.map_or("failed".to_string(), |c| c.to_string());
                    format!("{}={ic}", v.variant)
                })
                .collect();
            let flag = if r.agree { "" } else { "  (differs)" };
            let _ = writeln!(out, "{}  {} -> {}  {}{flag}", r.program, r.first, r.second, cells.join("  "));
        }
        let _ = writeln!(out, "agreement: {:.1}% of {} pair/program cases", self.agreement_fraction * 100.0, self.rows.len());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq3Result {
    pub original_ic: u64,
    pub guided_best_fitness: i64,
    pub guided_best_pipeline: String,
    pub unguided_best_fitness: i64,
    pub unguided_best_pipeline: String,
    pub guided_log: Vec<GenerationRecord>,
    pub unguided_log: Vec<GenerationRecord>,
}

/// Runs the search twice with the same config: once guided by `graph`, once
/// with an empty graph so initialization and mutation pick passes blindly.
pub fn run_rq3_ablation<E: Evaluator>(
    program: &E::Program,
    graph: &SynergyGraph,
    registry: &PassRegistry,
    backend: &E,
    config: &SearchConfig,
) -> Result<Rq3Result, ExperimentError> {
    let guided = run_search(program, graph, registry, backend, config)?;
    let blind = run_search(program, &SynergyGraph::empty(), registry, backend, config)?;
    Ok(Rq3Result {
        original_ic: guided.original_ic,
        guided_best_fitness: guided.best.fitness.expect("evaluated"),
        guided_best_pipeline: guided.best.forest.to_pipeline_string(),
        unguided_best_fitness: blind.best.fitness.expect("evaluated"),
        unguided_best_pipeline: blind.best.forest.to_pipeline_string(),
        guided_log: guided.log,
        unguided_log: blind.log,
    })
}

impl Rq3Result {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>10}  {:>14}  {:>14}", "generation", "guided best", "blind best");
        for (g, b) in self.guided_log.iter().zip(&self.unguided_log) {
            let _ = writeln!(out, "{:>10}  {:>14}  {:>14}", g.generation, g.best_fitness, b.best_fitness);
        }
        let _ = writeln!(out, "guided: {}", self.guided_best_pipeline);
        let _ = writeln!(out, "blind:  {}", self.unguided_best_pipeline);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq4Result {
    pub original_ic: u64,
    pub main_ga_pipeline: String,
    pub main_ga_ic: Option<u64>,
    pub refined_pipeline: String,
    pub refined_ic: Option<u64>,
    /// `(main_ga_ic - refined_ic) / original_ic * 100`.
    pub gain_pct: f64,
    pub refinement: RefinementReport,
}

/// Main search followed by refinement of its best individual.
pub fn run_rq4_ablation<E: Evaluator>(
    program: &E::Program,
    graph: &SynergyGraph,
    registry: &PassRegistry,
    backend: &E,
    search: &SearchConfig,
    refine_config: &RefineConfig,
) -> Result<Rq4Result, ExperimentError> {
    let main = run_search(program, graph, registry, backend, search)?;
    let refined = refine(&main.best.forest, program, backend, refine_config)?;
    let report = refined.report;
    let gain_pct = match (report.seed_ic, report.refined_ic) {
        (Some(a), Some(b)) if main.original_ic > 0 => (a as f64 - b as f64) / main.original_ic as f64 * 100.0,
        _ => 0.0,
    };
    Ok(Rq4Result {
        original_ic: main.original_ic,
        main_ga_pipeline: report.seed_pipeline.clone(),
        main_ga_ic: report.seed_ic,
        refined_pipeline: report.refined_pipeline.clone(),
        refined_ic: report.refined_ic,
        gain_pct,
        refinement: report,
    })
}

impl Rq4Result {
    pub fn to_table(&self) -> String {
        let show = |v: Option<u64>| v.map_or("failed".to_string(), |c| c.to_string());
        let mut out = String::new();
        let _ = writeln!(out, "original IC   {}", self.original_ic);
        let _ = writeln!(out, "main GA IC    {}  {}", show(self.main_ga_ic), self.main_ga_pipeline);
        let _ = writeln!(out, "refined IC    {}  {}", show(self.refined_ic), self.refined_pipeline);
        let _ = writeln!(out, "gain          {:.3}%", self.gain_pct);
        out
    }
}
