//! The three-step localization pipeline for one bug: bug review generation,
//! code condensation (coverage pre-filter plus three narrowing sub-steps),
//! and fault confirmation.
//!
//! Every selection step instructs a fenced JSON array and parses leniently;
//! an unparseable reply falls back to a documented non-LLM path and marks
//! the result degraded instead of aborting the bug.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate_tokens;
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message};
use crate::model::{
    BugCase, ClassRecord, CoverageProfile, ExternalMemory, Intermediates, MethodRecord, MethodRef,
    PipelineStep, ProjectSnapshot, RankedSuspects, Telemetry,
};
use crate::prompts::{number_lines, render, section, PromptError, PromptSet, Values};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("bug {0} has no failing test")]
    NoFailingTest(String),
}

/// Exact method-level coverage rate of a class: covered methods over total
/// methods, compared as rationals (no floating-point drift), so 2/4 == 1/2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoverageRate {
    pub covered: u32,
    pub total: u32,
}

impl PartialEq for CoverageRate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CoverageRate {}

impl CoverageRate {
    pub fn new(covered: u32, total: u32) -> Self {
        debug_assert!(total >= 1 && covered <= total);
        CoverageRate { covered, total }
    }

    pub fn is_zero(&self) -> bool {
        self.covered == 0
    }

    pub fn as_f64(&self) -> f64 {
        self.covered as f64 / self.total as f64
    }
}

impl PartialOrd for CoverageRate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CoverageRate {
    fn cmp(&self, other: &Self) -> Ordering {
        // a/b vs c/d  <=>  a*d vs c*b
        let left = self.covered as u64 * other.total as u64;
        let right = other.covered as u64 * self.total as u64;
        left.cmp(&right)
    }
}

/// Coverage rate of one class: count of failing-run-covered methods over the
/// method count.
pub fn coverage_rate(class: &ClassRecord, coverage: &CoverageProfile) -> CoverageRate {
    let covered = class
        .methods
        .iter()
        .filter(|m| coverage.covers_in_failing_run(&m.method_ref))
        .count() as u32;
    CoverageRate::new(covered, class.methods.len() as u32)
}

/// A class with its coverage rate, as produced by the pre-filter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRank {
    pub name: String,
    pub rate: CoverageRate,
}

/// Ranks classes by coverage rate descending (ties by name ascending),
/// drops zero-rate classes, and truncates to `cap`.
pub fn prefilter_classes(
    snapshot: &ProjectSnapshot,
    coverage: &CoverageProfile,
    cap: usize,
) -> Vec<ClassRank> {
    let mut ranked: Vec<ClassRank> = snapshot
        .classes
        .iter()
        .map(|c| ClassRank {
            name: c.name.clone(),
            rate: coverage_rate(c, coverage),
        })
        .filter(|r| !r.rate.is_zero())
        .collect();
    ranked.sort_by(|a, b| b.rate.cmp(&a.rate).then_with(|| a.name.cmp(&b.name)));
    ranked.truncate(cap);
    ranked
}

/// Condensation trail for one bug; each stage keeps a subset of the
/// previous one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondensationState {
    pub prefiltered: Vec<String>,
    pub kept_stage1: Vec<String>,
    pub kept_stage2: Vec<String>,
    pub selected_methods: Vec<MethodRef>,
}

impl CondensationState {
    pub fn from_result(result: &RankedSuspects) -> Self {
        CondensationState {
            prefiltered: result.intermediates.prefiltered_classes.clone(),
            kept_stage1: result.intermediates.kept_classes_1.clone(),
            kept_stage2: result.intermediates.kept_classes_2.clone(),
            selected_methods: result.intermediates.kept_methods.clone(),
        }
    }
}

/// Stage caps and budgets. Caps apply when the corresponding dynamic
/// guidance is silent; non-empty guidance overrides the clip for the
/// narrowing steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub prefilter_cap: usize,
    pub stage1_cap: usize,
    pub stage2_cap: usize,
    pub methods_per_class_cap: usize,
    pub ranking_cap: usize,
    pub prompt_budget_tokens: u64,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: "gpt-4o-mini".to_string(),
            temperature: 0.0,
            max_output_tokens: 1024,
            prefilter_cap: 60,
            stage1_cap: 20,
            stage2_cap: 5,
            methods_per_class_cap: 10,
            ranking_cap: 10,
            prompt_budget_tokens: 8000,
            workers: 4,
        }
    }
}

/// Ablation switches: disabling a stage removes it from the run and from
/// every prompt it would have contributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageToggles {
    pub bug_review: bool,
    pub condensation: bool,
    pub dynamic_memory: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            bug_review: true,
            condensation: true,
            dynamic_memory: true,
        }
    }
}

/// Everything a localization needs, shareable across worker threads.
pub struct PipelineContext<'a> {
    pub snapshot: &'a ProjectSnapshot,
    pub memory: &'a ExternalMemory,
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub config: &'a PipelineConfig,
    pub toggles: StageToggles,
    /// Prepended to every request tag, keeping tags unique across folds and
    /// iterations.
    pub tag_prefix: String,
}

impl<'a> PipelineContext<'a> {
    fn guidance(&self, step: PipelineStep) -> &str {
        if self.toggles.dynamic_memory {
            self.memory.dynamic_part.get(step)
        } else {
            ""
        }
    }

    fn tag(&self, rest: String) -> String {
        format!("{}{}", self.tag_prefix, rest)
    }

    fn chat(
        &self,
        step: &str,
        bug_id: &str,
        tag: String,
        prompt: String,
        telemetry: &mut Telemetry,
    ) -> Result<String, PipelineError> {
        let exchange = self.gateway.complete(ChatRequest {
            model: self.config.model.clone(),
            messages: vec![Message::user(prompt)],
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            tag: self.tag(tag),
            step: step.to_string(),
            bug_id: Some(bug_id.to_string()),
        })?;
        telemetry.add_exchange(
            exchange.prompt_tokens,
            exchange.completion_tokens,
            exchange.cost_micros,
            exchange.latency_micros,
        );
        Ok(exchange.reply_text)
    }
}

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

/// Extracts a JSON array of strings from a model reply: fenced block first,
/// then a bare `[...]` slice, then a lenient quoted-string scan inside the
/// first bracket pair. `None` means unparseable.
pub fn extract_string_array(reply: &str) -> Option<Vec<String>> {
    if let Some(fenced) = extract_fenced(reply) {
        if let Ok(v) = serde_json::from_str::<Vec<String>>(fenced.trim()) {
            return Some(v);
        }
    }
    let start = reply.find('[')?;
    let end = reply.rfind(']')?;
    if end < start {
        return None;
    }
    let slice = &reply[start..=end];
    if let Ok(v) = serde_json::from_str::<Vec<String>>(slice) {
        return Some(v);
    }
    let re = regex::Regex::new(r#""((?:[^"\\]|\\.)*)""#).unwrap();
    let items: Vec<String> = re
        .captures_iter(slice)
        .map(|c| c[1].replace("\\\"", "\""))
        .collect();
    if items.is_empty() {
        None
    } else {
        Some(items)
    }
}

fn extract_fenced(reply: &str) -> Option<&str> {
    let open = reply.find("```")?;
    let after = &reply[open + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Resolves `target` among a candidate set: exact triple, else unique name
/// match, else nearest declaration line (ties toward the smaller line).
fn resolve_among<'a>(candidates: &[&'a MethodRef], target: &MethodRef) -> Option<&'a MethodRef> {
    if let Some(exact) = candidates.iter().find(|r| **r == target) {
        return Some(exact);
    }
    let named: Vec<&MethodRef> = candidates
        .iter()
        .copied()
        .filter(|r| r.same_name(target))
        .collect();
    match named.len() {
        0 => None,
        _ => {
            let want = target.decl_line() as i64;
            named.into_iter().min_by_key(|r| {
                let line = r.decl_line() as i64;
                ((line - want).abs(), line)
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Prompt assembly helpers
// ---------------------------------------------------------------------------

fn stack_trace_text(bug: &BugCase) -> String {
    if bug.stack_trace.is_empty() {
        "(no stack trace recorded)".to_string()
    } else {
        bug.stack_trace
            .iter()
            .map(|f| format!("  {f}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn helper_section(bug: &BugCase) -> String {
    let Some(test) = bug.selected_failing_test() else {
        return String::new();
    };
    if test.helpers.is_empty() {
        return String::new();
    }
    let body = test
        .helpers
        .iter()
        .map(|(name, source)| format!("{name}:\n{source}"))
        .collect::<Vec<_>>()
        .join("\n\n");
    section("Helper test methods called by the failing test", &body)
}

fn bug_values<'a>(
    ctx: &PipelineContext<'_>,
    bug: &'a BugCase,
) -> Result<Values<'a>, PipelineError> {
    let test = bug
        .selected_failing_test()
        .ok_or_else(|| PipelineError::NoFailingTest(bug.bug_id.clone()))?;
    Ok(Values::new()
        .set("project_name", &ctx.snapshot.project_name)
        .set("project_summary", &ctx.memory.static_part.project_summary)
        .set("error_message", &bug.error_message)
        .set("stack_trace", stack_trace_text(bug))
        .set("failing_test_name", &test.name)
        .set("failing_test_source", &test.source))
}

// ---------------------------------------------------------------------------
// Step 1: bug review
// ---------------------------------------------------------------------------

/// Generates the bug review from the project summary, bug information
/// (including helper tests), and the review-step guidance. The reply is the
/// review, verbatim.
pub fn bug_review(
    ctx: &PipelineContext<'_>,
    bug: &BugCase,
    telemetry: &mut Telemetry,
) -> Result<String, PipelineError> {
    let prompt = render_review_prompt(ctx, bug)?;
    ctx.chat(
        "review",
        &bug.bug_id,
        format!("review:{}", bug.bug_id),
        prompt,
        telemetry,
    )
}

/// Rendered review prompt; exposed for golden-prompt tests and dry runs.
pub fn render_review_prompt(
    ctx: &PipelineContext<'_>,
    bug: &BugCase,
) -> Result<String, PipelineError> {
    let values = bug_values(ctx, bug)?
        .set("helper_section", helper_section(bug))
        .set(
            "guidance_section",
            section("Debugging guidance", ctx.guidance(PipelineStep::Review)),
        );
    Ok(render("review", &ctx.prompts.review, &values.0)?)
}

// ---------------------------------------------------------------------------
// Step 2: code condensation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondenseStage {
    One,
    Two,
}

impl CondenseStage {
    fn step(self) -> PipelineStep {
        match self {
            CondenseStage::One => PipelineStep::Condense1,
            CondenseStage::Two => PipelineStep::Condense2,
        }
    }

    fn strictness(self) -> &'static str {
        match self {
            CondenseStage::One => {
                "Review the candidate classes broadly and select every class plausibly involved in the failure."
            }
            CondenseStage::Two => {
                "Review the remaining candidate classes strictly and keep only the classes most likely to contain the fault."
            }
        }
    }
}

fn drop_to_budget(
    candidates: &mut Vec<ClassRank>,
    budget: u64,
    mut rendered: impl FnMut(&[ClassRank]) -> Result<String, PipelineError>,
) -> Result<String, PipelineError> {
    let mut prompt = rendered(candidates)?;
    while estimate_tokens(&prompt) > budget && candidates.len() > 1 {
        let victim = candidates
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.rate.cmp(&b.rate).then_with(|| b.name.cmp(&a.name)))
            .map(|(i, _)| i)
            .expect("non-empty");
        let dropped = candidates.remove(victim);
        log::warn!(
            "prompt over budget: dropped lowest-coverage candidate {} ({}/{})",
            dropped.name,
            dropped.rate.covered,
            dropped.rate.total
        );
        prompt = rendered(candidates)?;
    }
    Ok(prompt)
}

/// One class-narrowing sub-step. Returns the kept classes in reply order
/// plus a degraded flag when the reply was unparseable and the coverage
/// fallback was used.
pub fn condense_classes(
    ctx: &PipelineContext<'_>,
    stage: CondenseStage,
    candidates: &[ClassRank],
    bug: &BugCase,
    review: &str,
    telemetry: &mut Telemetry,
) -> Result<(Vec<String>, bool), PipelineError> {
    let step = stage.step();
    let cap = match stage {
        CondenseStage::One => ctx.config.stage1_cap,
        CondenseStage::Two => ctx.config.stage2_cap,
    };
    let guidance = ctx.guidance(step);
    let mut working = candidates.to_vec();
    let prompt = drop_to_budget(&mut working, ctx.config.prompt_budget_tokens, |cands| {
        render_condense_classes_prompt(ctx, stage, cands, bug, review)
    })?;
    let reply = ctx.chat(
        step.as_str(),
        &bug.bug_id,
        format!("{}:{}", step.as_str(), bug.bug_id),
        prompt,
        telemetry,
    )?;

    match extract_string_array(&reply) {
        Some(names) => {
            let known: BTreeSet<&str> = working.iter().map(|c| c.name.as_str()).collect();
            let mut kept = Vec::new();
            for name in names {
                let name = name.trim().to_string();
                if !known.contains(name.as_str()) {
                    log::warn!(
                        "bug {}: {} selection named unknown class {:?}; dropped",
                        bug.bug_id,
                        step,
                        name
                    );
                    continue;
                }
                if !kept.contains(&name) {
                    kept.push(name);
                }
            }
            // The default cap applies only while guidance is silent.
            if guidance.is_empty() {
                kept.truncate(cap);
            }
            Ok((kept, false))
        }
        None => {
            log::warn!(
                "bug {}: unparseable {} selection; falling back to top-{cap} by coverage rate",
                bug.bug_id,
                step
            );
            let mut by_rate = working.clone();
            by_rate.sort_by(|a, b| b.rate.cmp(&a.rate).then_with(|| a.name.cmp(&b.name)));
            by_rate.truncate(cap);
            Ok((by_rate.into_iter().map(|c| c.name).collect(), true))
        }
    }
}

/// Rendered class-narrowing prompt; exposed for golden tests and dry runs.
pub fn render_condense_classes_prompt(
    ctx: &PipelineContext<'_>,
    stage: CondenseStage,
    candidates: &[ClassRank],
    bug: &BugCase,
    review: &str,
) -> Result<String, PipelineError> {
    let step = stage.step();
    let cap = match stage {
        CondenseStage::One => ctx.config.stage1_cap,
        CondenseStage::Two => ctx.config.stage2_cap,
    };
    let guidance = ctx.guidance(step);
    let summaries = candidates
        .iter()
        .map(|c| {
            let summary = ctx
                .memory
                .static_part
                .class_summaries
                .get(&c.name)
                .map(String::as_str)
                .unwrap_or("(no summary available)");
            format!("### {}\n{}\n", c.name, summary)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let cap_instruction = if guidance.is_empty() {
        format!(" Keep at most {cap} classes.")
    } else {
        String::new()
    };
    let values = bug_values(ctx, bug)?
        .set("review_section", section("Bug review", review))
        .set("guidance_section", section("Debugging guidance", guidance))
        .set("candidate_summaries", summaries)
        .set("strictness", stage.strictness())
        .set("cap_instruction", cap_instruction);
    Ok(render(
        "condense_classes",
        &ctx.prompts.condense_classes,
        &values.0,
    )?)
}

/// Third condensation sub-step for one class: select `method@line` pairs
/// from the class source. Oversized classes are windowed per method group
/// and the window selections merged.
pub fn condense_methods(
    ctx: &PipelineContext<'_>,
    class_name: &str,
    bug: &BugCase,
    review: &str,
    telemetry: &mut Telemetry,
) -> Result<(Vec<MethodRef>, bool), PipelineError> {
    let Some(class) = ctx.snapshot.class(class_name) else {
        log::warn!(
            "bug {}: condense3 asked for unknown class {class_name}",
            bug.bug_id
        );
        return Ok((Vec::new(), false));
    };
    let guidance = ctx.guidance(PipelineStep::Condense3);
    let cap = ctx.config.methods_per_class_cap;

    let windows = method_windows(ctx, class, bug, review)?;
    let windowed = windows.len() > 1;
    let mut replies = Vec::new();
    for (i, prompt) in windows.into_iter().enumerate() {
        let tag = if windowed {
            format!("condense3:{}:{}:win{}", bug.bug_id, class.name, i + 1)
        } else {
            format!("condense3:{}:{}", bug.bug_id, class.name)
        };
        replies.push(ctx.chat("condense3", &bug.bug_id, tag, prompt, telemetry)?);
    }

    let mut selected: Vec<MethodRef> = Vec::new();
    let mut degraded = false;
    for reply in replies {
        match extract_string_array(&reply) {
            Some(tokens) => {
                for token in tokens {
                    let parsed = match crate::model::parse_method_at_line(&class.name, token.trim())
                    {
                        Ok(r) => r,
                        Err(e) => {
                            log::warn!("bug {}: bad method token: {e}", bug.bug_id);
                            continue;
                        }
                    };
                    match ctx.snapshot.resolve(&parsed, true) {
                        Ok(record) => {
                            if !selected.contains(&record.method_ref) {
                                selected.push(record.method_ref.clone());
                            }
                        }
                        Err(e) => log::warn!("bug {}: {e}; dropped", bug.bug_id),
                    }
                }
            }
            None => {
                degraded = true;
            }
        }
    }
    if degraded {
        log::warn!(
            "bug {}: unparseable method selection for {}; keeping all covered methods",
            bug.bug_id,
            class.name
        );
        selected = covered_methods(class, &bug.coverage);
    } else if guidance.is_empty() {
        selected.truncate(cap);
    }
    Ok((selected, degraded))
}

fn covered_methods(class: &ClassRecord, coverage: &CoverageProfile) -> Vec<MethodRef> {
    class
        .methods
        .iter()
        .filter(|m| coverage.covers_in_failing_run(&m.method_ref))
        .map(|m| m.method_ref.clone())
        .collect()
}

/// Renders one prompt when the class fits the budget, otherwise one prompt
/// per method-group window.
fn method_windows(
    ctx: &PipelineContext<'_>,
    class: &ClassRecord,
    bug: &BugCase,
    review: &str,
) -> Result<Vec<String>, PipelineError> {
    let full_source = number_lines(&class.source_text, 1);
    let whole = render_condense_methods_prompt(ctx, class, bug, review, &full_source, "")?;
    if estimate_tokens(&whole) <= ctx.config.prompt_budget_tokens {
        return Ok(vec![whole]);
    }

    let skeleton = render_condense_methods_prompt(ctx, class, bug, review, "", "")?;
    let per_window = ctx
        .config
        .prompt_budget_tokens
        .saturating_sub(estimate_tokens(&skeleton))
        .max(1);
    let mut groups: Vec<Vec<&MethodRecord>> = vec![Vec::new()];
    let mut used = 0u64;
    for method in &class.methods {
        let cost = estimate_tokens(&method.body_text) + 16;
        if used > 0 && used + cost > per_window {
            groups.push(Vec::new());
            used = 0;
        }
        groups.last_mut().unwrap().push(method);
        used += cost;
    }

    let group_count = groups.len();
    log::warn!(
        "class {} exceeds the prompt budget; windowing into {} method groups",
        class.name,
        group_count
    );
    let mut prompts = Vec::new();
    for (i, group) in groups.iter().enumerate() {
        let source = group
            .iter()
            .map(|m| number_lines(&m.body_text, m.body_span.start))
            .collect::<Vec<_>>()
            .join("\n ... \n");
        let note = format!(" (part {} of {})", i + 1, group_count);
        prompts.push(render_condense_methods_prompt(
            ctx, class, bug, review, &source, &note,
        )?);
    }
    Ok(prompts)
}

fn render_condense_methods_prompt(
    ctx: &PipelineContext<'_>,
    class: &ClassRecord,
    bug: &BugCase,
    review: &str,
    source: &str,
    window_note: &str,
) -> Result<String, PipelineError> {
    let guidance = ctx.guidance(PipelineStep::Condense3);
    let cap = ctx.config.methods_per_class_cap;
    let cap_instruction = if guidance.is_empty() {
        format!(" Keep at most {cap} methods.")
    } else {
        String::new()
    };
    let summary = ctx
        .memory
        .static_part
        .class_summaries
        .get(&class.name)
        .map(String::as_str)
        .unwrap_or("(no summary available)");
    let values = bug_values(ctx, bug)?
        .set("review_section", section("Bug review", review))
        .set("guidance_section", section("Debugging guidance", guidance))
        .set("class_name", format!("{}{}", class.name, window_note))
        .set("class_summary", summary)
        .set("class_source", source)
        .set("cap_instruction", cap_instruction);
    Ok(render(
        "condense_methods",
        &ctx.prompts.condense_methods,
        &values.0,
    )?)
}

// ---------------------------------------------------------------------------
// Step 3: fault confirmation
// ---------------------------------------------------------------------------

/// Ranks the selected methods. Reply refs resolve against the selected set
/// first and the whole snapshot second (a confirm step may legitimately
/// recall a pruned method); duplicates keep their first occurrence.
pub fn confirm_faults(
    ctx: &PipelineContext<'_>,
    selected: &[MethodRef],
    bug: &BugCase,
    review: &str,
    rates: &BTreeMap<String, CoverageRate>,
    telemetry: &mut Telemetry,
) -> Result<(Vec<MethodRef>, bool), PipelineError> {
    let ordered = order_for_confirm(selected, rates);
    let (prompt, _included) = render_confirm_prompt(ctx, &ordered, bug, review)?;
    let reply = ctx.chat(
        "confirm",
        &bug.bug_id,
        format!("confirm:{}", bug.bug_id),
        prompt,
        telemetry,
    )?;

    match extract_string_array(&reply) {
        Some(tokens) => {
            let candidate_refs: Vec<&MethodRef> = ordered.iter().collect();
            let mut ranking: Vec<MethodRef> = Vec::new();
            for token in tokens {
                let parsed = match crate::model::parse_method_ref(token.trim()) {
                    Ok(r) => r,
                    Err(e) => {
                        log::warn!("bug {}: bad ranking token: {e}", bug.bug_id);
                        continue;
                    }
                };
                let resolved = match resolve_among(&candidate_refs, &parsed) {
                    Some(r) => Some(r.clone()),
                    None => ctx
                        .snapshot
                        .resolve(&parsed, true)
                        .ok()
                        .map(|rec| rec.method_ref.clone()),
                };
                match resolved {
                    Some(r) => {
                        if !ranking.contains(&r) {
                            ranking.push(r);
                        }
                    }
                    None => log::warn!(
                        "bug {}: ranked method {} not in snapshot; dropped",
                        bug.bug_id,
                        parsed
                    ),
                }
            }
            ranking.truncate(ctx.config.ranking_cap);
            Ok((ranking, false))
        }
        None => {
            log::warn!(
                "bug {}: unparseable ranking; falling back to coverage-rate order",
                bug.bug_id
            );
            let mut fallback = ordered;
            fallback.truncate(ctx.config.ranking_cap);
            Ok((fallback, true))
        }
    }
}

/// Deterministic candidate order: containing-class coverage rate
/// descending, then class name, then declaration line.
fn order_for_confirm(
    selected: &[MethodRef],
    rates: &BTreeMap<String, CoverageRate>,
) -> Vec<MethodRef> {
    let mut ordered = selected.to_vec();
    let zero = CoverageRate::new(0, 1);
    ordered.sort_by(|a, b| {
        let ra = rates.get(a.class_name()).copied().unwrap_or(zero);
        let rb = rates.get(b.class_name()).copied().unwrap_or(zero);
        rb.cmp(&ra)
            .then_with(|| a.class_name().cmp(b.class_name()))
            .then_with(|| a.decl_line().cmp(&b.decl_line()))
    });
    ordered.dedup();
    ordered
}

/// Renders the confirmation prompt from the candidate method bodies (line
/// numbers included). Over budget, the lowest-rate candidates are dropped
/// first, then the largest bodies are truncated tail-first. Returns the
/// prompt and the refs actually included.
pub fn render_confirm_prompt(
    ctx: &PipelineContext<'_>,
    ordered: &[MethodRef],
    bug: &BugCase,
    review: &str,
) -> Result<(String, Vec<MethodRef>), PipelineError> {
    let mut blocks: Vec<(MethodRef, String)> = Vec::new();
    for r in ordered {
        let Ok(record) = ctx.snapshot.resolve(r, false) else {
            continue;
        };
        blocks.push((r.clone(), confirm_block(r, record, None)));
    }

    let build = |blocks: &[(MethodRef, String)]| -> Result<String, PipelineError> {
        let body = blocks
            .iter()
            .map(|(_, b)| b.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let values = bug_values(ctx, bug)?
            .set("review_section", section("Bug review", review))
            .set(
                "guidance_section",
                section("Debugging guidance", ctx.guidance(PipelineStep::Confirm)),
            )
            .set("method_blocks", body)
            .set("ranking_cap", ctx.config.ranking_cap.to_string());
        Ok(render("confirm", &ctx.prompts.confirm, &values.0)?)
    };

    let mut prompt = build(&blocks)?;
    while estimate_tokens(&prompt) > ctx.config.prompt_budget_tokens && blocks.len() > 1 {
        let (dropped, _) = blocks.pop().expect("non-empty");
        log::warn!("confirm prompt over budget: dropped candidate {dropped}");
        prompt = build(&blocks)?;
    }
    // A single oversized candidate: truncate its body tail-first.
    while estimate_tokens(&prompt) > ctx.config.prompt_budget_tokens && blocks.len() == 1 {
        let (r, _) = &blocks[0];
        let record = ctx.snapshot.resolve(r, false).expect("resolved above");
        let lines = record.body_text.lines().count();
        let keep = lines.saturating_sub(lines.div_ceil(4)).max(1);
        let truncated = confirm_block(r, record, Some(keep));
        if truncated == blocks[0].1 {
            break;
        }
        log::warn!("confirm prompt over budget: truncated body of {r} to {keep} lines");
        blocks[0].1 = truncated;
        prompt = build(&blocks)?;
    }
    Ok((prompt, blocks.into_iter().map(|(r, _)| r).collect()))
}

fn confirm_block(r: &MethodRef, record: &MethodRecord, keep_lines: Option<usize>) -> String {
    let body = match keep_lines {
        None => record.body_text.clone(),
        Some(n) => record
            .body_text
            .lines()
            .take(n)
            .collect::<Vec<_>>()
            .join("\n"),
    };
    format!(
        "### {} (file {})\n{}\n",
        r,
        record.file,
        number_lines(&body, record.body_span.start)
    )
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Runs the full pipeline for one bug and returns the ranked suspects with
/// all intermediates and telemetry. Degraded stages mark the result; only
/// provider failures abort.
pub fn localize(ctx: &PipelineContext<'_>, bug: &BugCase) -> Result<RankedSuspects, PipelineError> {
    let mut telemetry = Telemetry::default();
    let mut degraded: Vec<String> = Vec::new();

    let prefiltered = prefilter_classes(ctx.snapshot, &bug.coverage, ctx.config.prefilter_cap);
    let rates: BTreeMap<String, CoverageRate> = prefiltered
        .iter()
        .map(|c| (c.name.clone(), c.rate))
        .collect();
    let prefiltered_names: Vec<String> = prefiltered.iter().map(|c| c.name.clone()).collect();

    let review = if ctx.toggles.bug_review {
        bug_review(ctx, bug, &mut telemetry)?
    } else {
        String::new()
    };

    let (kept1, kept2, mut selected) = if prefiltered.is_empty() {
        log::warn!("bug {}: no class covered by the failing run", bug.bug_id);
        degraded.push("prefilter-empty".to_string());
        (Vec::new(), Vec::new(), Vec::new())
    } else if ctx.toggles.condensation {
        let (kept1, d1) = condense_classes(
            ctx,
            CondenseStage::One,
            &prefiltered,
            bug,
            &review,
            &mut telemetry,
        )?;
        if d1 {
            degraded.push("condense1".to_string());
        }
        let stage2_candidates: Vec<ClassRank> = kept1
            .iter()
            .filter_map(|name| prefiltered.iter().find(|c| &c.name == name).cloned())
            .collect();
        let (kept2, d2) = condense_classes(
            ctx,
            CondenseStage::Two,
            &stage2_candidates,
            bug,
            &review,
            &mut telemetry,
        )?;
        if d2 {
            degraded.push("condense2".to_string());
        }
        let mut selected: Vec<MethodRef> = Vec::new();
        for class_name in &kept2 {
            let (methods, d3) = condense_methods(ctx, class_name, bug, &review, &mut telemetry)?;
            if d3 {
                degraded.push(format!("condense3:{class_name}"));
            }
            for m in methods {
                if !selected.contains(&m) {
                    selected.push(m);
                }
            }
        }
        (kept1, kept2, selected)
    } else {
        // Condensation disabled: confirm over every covered method of the
        // pre-filtered classes.
        let mut selected = Vec::new();
        for c in &prefiltered {
            if let Some(class) = ctx.snapshot.class(&c.name) {
                selected.extend(covered_methods(class, &bug.coverage));
            }
        }
        (
            prefiltered_names.clone(),
            prefiltered_names.clone(),
            selected,
        )
    };

    if selected.is_empty() && !kept2.is_empty() {
        // Every per-class selection came back empty; fall back to the
        // covered methods of the surviving classes so confirmation has
        // input.
        for class_name in &kept2 {
            if let Some(class) = ctx.snapshot.class(class_name) {
                selected.extend(covered_methods(class, &bug.coverage));
            }
        }
        if !selected.is_empty() {
            degraded.push("empty-selection".to_string());
        }
    }

    let ranking = if selected.is_empty() {
        Vec::new()
    } else {
        let (ranking, d4) = confirm_faults(ctx, &selected, bug, &review, &rates, &mut telemetry)?;
        if d4 {
            degraded.push("confirm".to_string());
        }
        ranking
    };

    let result = RankedSuspects {
        bug_id: bug.bug_id.clone(),
        ranking,
        intermediates: Intermediates {
            bug_review: review,
            prefiltered_classes: prefiltered_names,
            kept_classes_1: kept1,
            kept_classes_2: kept2,
            kept_methods: selected,
        },
        telemetry,
        degraded,
    };
    verify_result_invariants(ctx.snapshot, &result);
    Ok(result)
}

/// Hard invariants checked on every pipeline run: the ranking has no
/// duplicates and resolves, and (when no stage degraded) each narrowing
/// stage kept a subset of the previous one.
fn verify_result_invariants(snapshot: &ProjectSnapshot, result: &RankedSuspects) {
    let unique: BTreeSet<&MethodRef> = result.ranking.iter().collect();
    assert_eq!(
        unique.len(),
        result.ranking.len(),
        "ranking for {} contains duplicates",
        result.bug_id
    );
    for r in &result.ranking {
        assert!(
            snapshot.resolve(r, false).is_ok(),
            "ranked method {r} does not resolve in the snapshot"
        );
    }
    if result.degraded.is_empty() {
        let inter = &result.intermediates;
        let pre: BTreeSet<&String> = inter.prefiltered_classes.iter().collect();
        let s1: BTreeSet<&String> = inter.kept_classes_1.iter().collect();
        let s2: BTreeSet<&String> = inter.kept_classes_2.iter().collect();
        assert!(
            s1.is_subset(&pre) && s2.is_subset(&s1),
            "narrowing stages for {} are not nested",
            result.bug_id
        );
        for m in &inter.kept_methods {
            assert!(
                s2.contains(&m.class_name().to_string()),
                "selected method {m} is outside the kept classes"
            );
        }
    }
}

/// Localizes several bugs on a bounded worker pool (steps within one bug
/// stay sequential). Results come back in input order.
pub fn localize_many(
    ctx: &PipelineContext<'_>,
    bugs: &[&BugCase],
) -> Vec<Result<RankedSuspects, PipelineError>> {
    let workers = ctx.config.workers.clamp(1, bugs.len().max(1));
    if workers == 1 || bugs.len() <= 1 {
        return bugs.iter().map(|b| localize(ctx, b)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RankedSuspects, PipelineError>>>> =
        Mutex::new((0..bugs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, AtomicOrdering::SeqCst);
                if i >= bugs.len() {
                    break;
                }
                let result = localize(ctx, bugs[i]);
                results.lock().unwrap()[i] = Some(result);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}
