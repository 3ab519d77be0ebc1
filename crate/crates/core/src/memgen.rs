//! Dynamic-memory generation: bug report generation over a training batch,
//! then the iterative run-compare-refine loop that produces per-step
//! debugging guidance.
//!
//! Each iteration localizes every batch bug with the current memory, then
//! walks the refinement order (bugs by id; steps review, condense1..3,
//! confirm) asking the model to refine that step's guidance or confirm
//! `NO_UPDATE`. A full pass of `NO_UPDATE`s converges early.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError, Message};
use crate::memory::{apply_refinement, Refinement, RefinementMeta};
use crate::model::{BugCase, ExternalMemory, MethodRef, PipelineStep, ProjectSnapshot};
use crate::pipeline::{
    localize, CondensationState, PipelineConfig, PipelineContext, PipelineError, StageToggles,
};
use crate::prompts::{render, section, PromptSet, Values};

/// Reply sentinel confirming that no refinement is needed.
pub const NO_UPDATE_SENTINEL: &str = "NO_UPDATE";

#[derive(Debug, Error)]
pub enum MemgenError {
    #[error("invalid training batch: {0}")]
    InvalidBatch(String),
    #[error("bug {0} has no patched bodies; cannot serve as a training reference")]
    MissingPatch(String),
    #[error("training/evaluation leakage: bug ids {0:?} appear on both sides")]
    Leakage(Vec<String>),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemgenConfig {
    pub batch_size: usize,
    pub iterations: u32,
    pub seed: u64,
    /// Draw a fresh batch each iteration instead of reusing one batch.
    pub resample_each_iteration: bool,
}

impl Default for MemgenConfig {
    fn default() -> Self {
        MemgenConfig {
            batch_size: 5,
            iterations: 3,
            seed: 17,
            resample_each_iteration: false,
        }
    }
}

/// A reference debugging report for one training bug.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BugReport {
    pub bug_id: String,
    /// The model's report, verbatim.
    pub raw: String,
    /// The ground-truth methods whose original/patched bodies were supplied.
    pub buggy_methods: Vec<MethodRef>,
}

/// Uniform random sample without replacement, deterministic per seed; the
/// returned batch is sorted by bug id (the processing order).
pub fn select_training_batch(
    bugs: &[BugCase],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<&BugCase>, MemgenError> {
    if batch_size == 0 {
        return Err(MemgenError::InvalidBatch("batch size is zero".into()));
    }
    if batch_size > bugs.len() {
        return Err(MemgenError::InvalidBatch(format!(
            "batch size {batch_size} exceeds population {}",
            bugs.len()
        )));
    }
    let mut batch: Vec<&BugCase> = sample_order(bugs, seed)
        .into_iter()
        .take(batch_size)
        .collect();
    batch.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
    Ok(batch)
}

/// Seed-deterministic shuffled view of the bug list (sampling order).
fn sample_order(bugs: &[BugCase], seed: u64) -> Vec<&BugCase> {
    let mut ordered: Vec<&BugCase> = bugs.iter().collect();
    ordered.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ordered.shuffle(&mut rng);
    ordered
}

/// Generates the reference report for one training bug from its bug
/// information, the original and patched bodies of the ground-truth
/// methods, and the affected class summaries.
pub fn generate_bug_report(
    snapshot: &ProjectSnapshot,
    bug: &BugCase,
    memory: &ExternalMemory,
    gateway: &Gateway,
    prompts: &PromptSet,
    config: &PipelineConfig,
    tag_prefix: &str,
) -> Result<BugReport, MemgenError> {
    if bug.patched_bodies.is_empty() || bug.ground_truth.is_empty() {
        return Err(MemgenError::MissingPatch(bug.bug_id.clone()));
    }
    let prompt = render_bug_report_prompt(snapshot, bug, memory, prompts)?;
    let exchange = gateway.complete(ChatRequest {
        model: config.model.clone(),
        messages: vec![Message::user(prompt)],
        temperature: config.temperature,
        max_output_tokens: config.max_output_tokens,
        tag: format!("{tag_prefix}report:{}", bug.bug_id),
        step: "report".to_string(),
        bug_id: Some(bug.bug_id.clone()),
    })?;
    Ok(BugReport {
        bug_id: bug.bug_id.clone(),
        raw: exchange.reply_text,
        buggy_methods: bug.ground_truth.iter().cloned().collect(),
    })
}

/// Rendered bug-report prompt; exposed for golden-prompt tests.
pub fn render_bug_report_prompt(
    snapshot: &ProjectSnapshot,
    bug: &BugCase,
    memory: &ExternalMemory,
    prompts: &PromptSet,
) -> Result<String, MemgenError> {
    let test = bug
        .selected_failing_test()
        .ok_or_else(|| PipelineError::NoFailingTest(bug.bug_id.clone()))?;
    let mut diffs = String::new();
    for method_ref in &bug.ground_truth {
        let original = snapshot
            .resolve(method_ref, false)
            .map(|r| r.body_text.clone())
            .unwrap_or_else(|_| "(source unavailable)".to_string());
        let patched = bug
            .patched_bodies
            .get(method_ref)
            .cloned()
            .unwrap_or_else(|| "(patched version unavailable)".to_string());
        let _ = write!(
            diffs,
            "### {method_ref}\nOriginal:\n{original}\n\nFixed:\n{patched}\n\n"
        );
    }
    let mut class_summaries = String::new();
    for class in bug.ground_truth_classes() {
        let summary = memory
            .static_part
            .class_summaries
            .get(class)
            .map(String::as_str)
            .unwrap_or("(no summary available)");
        let _ = write!(class_summaries, "### {class}\n{summary}\n\n");
    }
    let stack = if bug.stack_trace.is_empty() {
        "(no stack trace recorded)".to_string()
    } else {
        bug.stack_trace
            .iter()
            .map(|f| format!("  {f}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let values = Values::new()
        .set("project_name", &snapshot.project_name)
        .set("project_summary", &memory.static_part.project_summary)
        .set("error_message", &bug.error_message)
        .set("stack_trace", stack)
        .set("failing_test_name", &test.name)
        .set("failing_test_source", &test.source)
        .set("method_diffs", diffs)
        .set("class_summaries", class_summaries);
    Ok(render("bug_report", &prompts.bug_report, &values.0)?)
}

/// Selection quality of one condensation sub-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub selected: usize,
    /// Fraction of ground-truth items retained.
    pub recall: f64,
    /// Fraction of selections that are (or contain) ground truth.
    pub precision: f64,
}

/// Quantitative feedback handed to the condensation refiner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondenseMetrics {
    pub stage1: StageMetrics,
    pub stage2: StageMetrics,
    pub stage3: StageMetrics,
}

fn stage_metrics(selected: usize, relevant_kept: usize, truth_total: usize) -> StageMetrics {
    StageMetrics {
        selected,
        recall: if truth_total == 0 {
            0.0
        } else {
            relevant_kept as f64 / truth_total as f64
        },
        precision: if selected == 0 {
            0.0
        } else {
            relevant_kept as f64 / selected as f64
        },
    }
}

/// Class-level recall/precision for sub-steps 1-2, method-level for
/// sub-step 3. Selections are treated as sets, so repeated entries never
/// inflate a metric.
pub fn compute_condense_metrics(
    state: &CondensationState,
    ground_truth: &BTreeSet<MethodRef>,
) -> CondenseMetrics {
    let truth_classes: BTreeSet<&str> = ground_truth.iter().map(|r| r.class_name()).collect();
    let class_stage = |kept: &[String]| {
        let kept: BTreeSet<&str> = kept.iter().map(String::as_str).collect();
        let relevant = kept.intersection(&truth_classes).count();
        stage_metrics(kept.len(), relevant, truth_classes.len())
    };
    let kept_methods: BTreeSet<&MethodRef> = state.selected_methods.iter().collect();
    let retained = ground_truth
        .iter()
        .filter(|t| kept_methods.contains(t))
        .count();
    CondenseMetrics {
        stage1: class_stage(&state.kept_stage1),
        stage2: class_stage(&state.kept_stage2),
        stage3: stage_metrics(kept_methods.len(), retained, ground_truth.len()),
    }
}

fn metrics_text(m: &CondenseMetrics) -> String {
    format!(
        "classes kept at sub-step 1: {} (recall {:.2}, precision {:.2})\n\
         classes kept at sub-step 2: {} (recall {:.2}, precision {:.2})\n\
         methods kept at sub-step 3: {} (recall {:.2}, precision {:.2})",
        m.stage1.selected,
        m.stage1.recall,
        m.stage1.precision,
        m.stage2.selected,
        m.stage2.recall,
        m.stage2.precision,
        m.stage3.selected,
        m.stage3.recall,
        m.stage3.precision,
    )
}

fn step_label(step: PipelineStep) -> &'static str {
    match step {
        PipelineStep::Review => "bug review",
        PipelineStep::Condense1 => "class condensation (sub-step 1)",
        PipelineStep::Condense2 => "class condensation (sub-step 2)",
        PipelineStep::Condense3 => "method condensation (sub-step 3)",
        PipelineStep::Confirm => "fault confirmation",
    }
}

/// Asks the refiner to improve one step's guidance or confirm `NO_UPDATE`.
///
/// Review/confirm refinements see the reference bug report; condensation
/// refinements see the bug information plus the selection metrics.
#[allow(clippy::too_many_arguments)]
pub fn refine_step_memory(
    snapshot: &ProjectSnapshot,
    step: PipelineStep,
    intermediate: &str,
    bug: &BugCase,
    report: &BugReport,
    current_guidance: &str,
    metrics: Option<&CondenseMetrics>,
    gateway: &Gateway,
    prompts: &PromptSet,
    config: &PipelineConfig,
    tag: String,
) -> Result<Refinement, MemgenError> {
    let reference_section = match step {
        PipelineStep::Review | PipelineStep::Confirm => {
            section("Reference bug report", &report.raw)
        }
        _ => {
            let m = metrics.expect("condense refinement requires metrics");
            let bug_info = format!(
                "Error message:\n{}\n\nGround-truth methods: {}",
                bug.error_message,
                report
                    .buggy_methods
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            format!(
                "{}{}",
                section("Bug information", &bug_info),
                section("Selection metrics for this attempt", &metrics_text(m))
            )
        }
    };
    let values = Values::new()
        .set("project_name", &snapshot.project_name)
        .set("step_label", step_label(step))
        .set("bug_id", &bug.bug_id)
        .set("intermediate", intermediate)
        .set(
            "current_guidance_section",
            section("Current guidance", current_guidance),
        )
        .set("reference_section", reference_section);
    let prompt = render("refine", &prompts.refine, &values.0)?;
    let exchange = gateway.complete(ChatRequest {
        model: config.model.clone(),
        messages: vec![Message::user(prompt)],
        temperature: config.temperature,
        max_output_tokens: config.max_output_tokens,
        tag,
        step: "refine".to_string(),
        bug_id: Some(bug.bug_id.clone()),
    })?;
    let reply = exchange.reply_text.trim();
    if reply.starts_with(NO_UPDATE_SENTINEL) {
        Ok(Refinement::NoUpdate)
    } else {
        Ok(Refinement::Replace(reply.to_string()))
    }
}

/// One refinement decision in the memgen log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemgenEvent {
    pub iteration: u32,
    pub bug_id: String,
    pub step: PipelineStep,
    pub updated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CondenseMetrics>,
}

/// Full record of a memgen run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MemgenLog {
    pub batch: Vec<String>,
    pub iterations_run: u32,
    /// Set when a full iteration produced only `NO_UPDATE`s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged_after: Option<u32>,
    pub events: Vec<MemgenEvent>,
}

/// Builds dynamic memory from a training batch.
///
/// Refuses to run when `training` overlaps `holdout_ids` (leakage guard).
/// Bugs without patched bodies are skipped with a warning and the batch is
/// refilled from the remaining sampling order.
#[allow(clippy::too_many_arguments)]
pub fn build_dynamic_memory(
    snapshot: &ProjectSnapshot,
    training: &[BugCase],
    holdout_ids: &BTreeSet<String>,
    base_memory: &ExternalMemory,
    gateway: &Gateway,
    prompts: &PromptSet,
    pipeline_config: &PipelineConfig,
    toggles: StageToggles,
    config: &MemgenConfig,
    tag_prefix: &str,
) -> Result<(ExternalMemory, MemgenLog), MemgenError> {
    let leaked: Vec<String> = training
        .iter()
        .map(|b| b.bug_id.clone())
        .filter(|id| holdout_ids.contains(id))
        .collect();
    if !leaked.is_empty() {
        return Err(MemgenError::Leakage(leaked));
    }
    if config.batch_size == 0 || config.batch_size > training.len() {
        return Err(MemgenError::InvalidBatch(format!(
            "batch size {} for a training pool of {}",
            config.batch_size,
            training.len()
        )));
    }

    let mut log = MemgenLog::default();
    let mut memory = base_memory.clone();

    let pick_batch = |seed: u64, log: &mut MemgenLog| -> Result<Vec<&BugCase>, MemgenError> {
        let mut batch: Vec<&BugCase> = Vec::new();
        for bug in sample_order(training, seed) {
            if batch.len() == config.batch_size {
                break;
            }
            if bug.patched_bodies.is_empty() || bug.ground_truth.is_empty() {
                log::warn!(
                    "bug {} lacks patches or ground truth; refilling the batch from the pool",
                    bug.bug_id
                );
                continue;
            }
            batch.push(bug);
        }
        if batch.is_empty() {
            return Err(MemgenError::InvalidBatch(
                "no training bug has patched bodies".into(),
            ));
        }
        if batch.len() < config.batch_size {
            log::warn!(
                "only {} of {} requested training bugs are usable",
                batch.len(),
                config.batch_size
            );
        }
        batch.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
        log.batch = batch.iter().map(|b| b.bug_id.clone()).collect();
        Ok(batch)
    };

    let mut batch = pick_batch(config.seed, &mut log)?;
    let mut reports: std::collections::BTreeMap<String, BugReport> = batch
        .iter()
        .map(|bug| {
            generate_bug_report(
                snapshot,
                bug,
                &memory,
                gateway,
                prompts,
                pipeline_config,
                tag_prefix,
            )
            .map(|r| (bug.bug_id.clone(), r))
        })
        .collect::<Result<_, _>>()?;

    for iteration in 1..=config.iterations {
        if config.resample_each_iteration && iteration > 1 {
            batch = pick_batch(config.seed.wrapping_add(iteration as u64), &mut log)?;
            for bug in &batch {
                if !reports.contains_key(&bug.bug_id) {
                    let report = generate_bug_report(
                        snapshot,
                        bug,
                        &memory,
                        gateway,
                        prompts,
                        pipeline_config,
                        &format!("{tag_prefix}iter{iteration}:"),
                    )?;
                    reports.insert(bug.bug_id.clone(), report);
                }
            }
        }

        // Localize every batch bug against the memory this iteration
        // started with; refinements below feed the next pass.
        let ctx = PipelineContext {
            snapshot,
            memory: &memory,
            gateway,
            prompts,
            config: pipeline_config,
            toggles,
            tag_prefix: format!("{tag_prefix}iter{iteration}:"),
        };
        let mut localized: Vec<(&BugCase, crate::model::RankedSuspects)> = Vec::new();
        for bug in &batch {
            match localize(&ctx, bug) {
                Ok(result) => localized.push((bug, result)),
                Err(e) => {
                    log::warn!(
                        "bug {} failed during memgen iteration {iteration}: {e}; skipped",
                        bug.bug_id
                    );
                }
            }
        }

        let mut any_update = false;
        for (bug, result) in &localized {
            let report = &reports[&bug.bug_id];
            let state = CondensationState::from_result(result);
            let metrics = compute_condense_metrics(&state, &bug.ground_truth);
            for step in PipelineStep::ALL {
                let intermediate = match step {
                    PipelineStep::Review => result.intermediates.bug_review.clone(),
                    PipelineStep::Condense1 => list_text(&result.intermediates.kept_classes_1),
                    PipelineStep::Condense2 => list_text(&result.intermediates.kept_classes_2),
                    PipelineStep::Condense3 => ref_list_text(&result.intermediates.kept_methods),
                    PipelineStep::Confirm => ref_list_text(&result.ranking),
                };
                let is_condense = matches!(
                    step,
                    PipelineStep::Condense1 | PipelineStep::Condense2 | PipelineStep::Condense3
                );
                let refinement = refine_step_memory(
                    snapshot,
                    step,
                    &intermediate,
                    bug,
                    report,
                    memory.dynamic_part.get(step),
                    is_condense.then_some(&metrics),
                    gateway,
                    prompts,
                    pipeline_config,
                    format!(
                        "{tag_prefix}iter{iteration}:refine:{}:{}",
                        step.as_str(),
                        bug.bug_id
                    ),
                )?;
                let updated = matches!(refinement, Refinement::Replace(_));
                any_update |= updated;
                memory = apply_refinement(
                    &memory,
                    step,
                    &refinement,
                    &RefinementMeta {
                        bug_id: bug.bug_id.clone(),
                        iteration,
                    },
                );
                log.events.push(MemgenEvent {
                    iteration,
                    bug_id: bug.bug_id.clone(),
                    step,
                    updated,
                    metrics: is_condense.then_some(metrics),
                });
            }
        }

        log.iterations_run = iteration;
        if !any_update {
            log.converged_after = Some(iteration);
            break;
        }
    }

    Ok((memory, log))
}

fn list_text(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".to_string()
    } else {
        items.join("\n")
    }
}

fn ref_list_text(items: &[MethodRef]) -> String {
    if items.is_empty() {
        "(none)".to_string()
    } else {
        items
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{}. {r}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
