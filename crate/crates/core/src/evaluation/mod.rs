//! "Apply a pipeline, return the instruction count."
//!
//! Two backends implement [`Evaluator`]: [`OptEvaluator`] shells out to an
//! LLVM `opt` binary, and [`MockEvaluator`] runs a deterministic synthetic
//! program model whose execution order follows the pass-manager nesting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{validate, PipelineForest, ValidationReport};
use crate::registry::PassRegistry;

pub mod mock;
pub mod opt;

pub use mock::{schedule_of, ExecutionSchedule, MockError, MockEvaluator, MockProgram, ScheduleEvent};
pub use opt::{count_ir_instructions, opt_backend_evaluate, IrCountError, OptConfig, OptEvaluator, OPT_ENV};

/// Outcome of one evaluation. A failed evaluation is data, not an error:
/// searches rank it below every successful one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum EvaluationResult {
    Ok { instruction_count: u64 },
    Failed { detail: String },
}

impl EvaluationResult {
    pub fn ok(instruction_count: u64) -> Self {
        EvaluationResult::Ok { instruction_count }
    }

    pub fn failed(detail: impl Into<String>) -> Self {
        EvaluationResult::Failed {
            detail: detail.into(),
        }
    }

    pub fn instruction_count(&self) -> Option<u64> {
        match self {
            EvaluationResult::Ok { instruction_count } => Some(*instruction_count),
            EvaluationResult::Failed { .. } => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, EvaluationResult::Ok { .. })
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("pipeline rejected before evaluation: {}", summarize(.0))]
    InvalidPipeline(ValidationReport),
    #[error("cannot determine original instruction count: {0}")]
    Baseline(String),
}

fn summarize(report: &ValidationReport) -> String {
    report
        .violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// An instruction-count oracle for some kind of program.
///
/// Implementations must be deterministic for a fixed program and pipeline
/// and safe to call from several threads at once.
pub trait Evaluator: Sync {
    type Program: Sync;

    /// Instruction count of the program before any pass runs.
    fn original_count(&self, program: &Self::Program) -> Result<u64, EvalError>;

    /// Applies `forest` to `program`. The forest is assumed valid.
    fn run(&self, program: &Self::Program, forest: &PipelineForest) -> Result<EvaluationResult, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    type Program = E::Program;

    fn original_count(&self, program: &Self::Program) -> Result<u64, EvalError> {
        (**self).original_count(program)
    }

    fn run(&self, program: &Self::Program, forest: &PipelineForest) -> Result<EvaluationResult, EvalError> {
        (**self).run(program, forest)
    }
}

/// Validates `forest` against `registry`, then evaluates it.
pub fn evaluate<E: Evaluator>(
    backend: &E,
    registry: &PassRegistry,
    program: &E::Program,
    forest: &PipelineForest,
) -> Result<EvaluationResult, EvalError> {
    let report = validate(forest, registry);
    if !report.is_valid() {
        return Err(EvalError::InvalidPipeline(report));
    }
    backend.run(program, forest)
}
