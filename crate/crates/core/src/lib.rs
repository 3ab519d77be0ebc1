//! MemFL: project-wide, method-level fault localization driven by an LLM
//! pipeline with a two-part external memory.
//!
//! The crate is organized around the run lifecycle:
//!
//! - [`model`] — shared domain types and the `class@method@line` identifier.
//! - [`index`] — builds a [`model::ProjectSnapshot`] and bug cases from disk.
//! - [`gateway`] — the single choke-point for model access (live, replay,
//!   scripted) with caching, retries, and exact cost accounting.
//! - [`memory`] — static memory generation plus the versioned memory store.
//! - [`prompts`] — template loading and rendering.
//! - [`pipeline`] — the three localization steps for one bug.
//! - [`memgen`] — iterative dynamic-memory construction from a training
//!   batch.
//! - [`eval`] — acc@k, cross-validation, overlap analysis, the Ochiai
//!   baseline, and report writers.

pub mod eval;
pub mod gateway;
pub mod index;
pub mod memgen;
pub mod memory;
pub mod model;
pub mod pipeline;
pub mod prompts;

pub use model::{
    BugCase, ClassRecord, CoverageProfile, DynamicMemory, ExternalMemory, MethodRecord, MethodRef,
    PipelineStep, ProjectSnapshot, RankedSuspects, StaticMemory,
};

/// Byte-heuristic token estimate used whenever a provider-side counter is
/// unavailable: tokens ~= ceil(bytes / 4).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}
