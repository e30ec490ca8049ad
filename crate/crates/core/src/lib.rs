//! Tooling for LLVM new-pass-manager pipelines: a grammar-checked forest
//! model, instruction-count evaluation backends, offline synergy mining, a
//! structure-aware genetic search, and partition-based structural
//! refinement.

pub mod cli;
pub mod evaluation;
pub mod experiments;
pub mod metrics;
pub mod pipeline;
pub mod refinement;
pub mod registry;
pub mod search;
pub mod synergy;

pub use pipeline::{PipelineForest, PipelineNode, TypedPass};
pub use registry::{PassInfo, PassLevel, PassRegistry};
