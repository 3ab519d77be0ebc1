//! Evaluation harness: acc@k, k-fold cross-validation with per-fold dynamic
//! memory, overlap analysis, exact cost/time accounting, and an Ochiai
//! spectrum baseline.
//!
//! Ground-truth matching uses exact class+method with a configurable line
//! tolerance (default +/-2; real patches shift declarations).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{run_cost_report, CostReport, Gateway};
use crate::memgen::{build_dynamic_memory, MemgenConfig, MemgenError, MemgenLog};
use crate::model::{
    BugCase, ExternalMemory, MethodRef, ProjectSnapshot, RankedSuspects, Telemetry,
};
use crate::pipeline::{
    localize_many, PipelineConfig, PipelineContext, PipelineError, StageToggles,
};
use crate::prompts::PromptSet;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bug {0} has no ground truth")]
    MissingTruth(String),
    #[error("fold {fold} failed: {source}")]
    FoldFailed {
        fold: u32,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Memgen(#[from] MemgenError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("overlap analysis supports at most 3 sets, got {0}")]
    TooManySets(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// acc@k
// ---------------------------------------------------------------------------

/// Exact class+method match with a line tolerance.
pub fn matches_truth(candidate: &MethodRef, truth: &MethodRef, tolerance: u32) -> bool {
    candidate.same_name(truth) && candidate.decl_line().abs_diff(truth.decl_line()) <= tolerance
}

/// True when any of the first `k` ranked methods matches the truth set.
pub fn hit_at_k(
    ranking: &[MethodRef],
    truth: &BTreeSet<MethodRef>,
    k: usize,
    tolerance: u32,
) -> bool {
    ranking
        .iter()
        .take(k)
        .any(|r| truth.iter().any(|t| matches_truth(r, t, tolerance)))
}

/// Number of bugs whose ground truth appears in the top `k` suggestions.
pub fn acc_at_k(
    results: &[RankedSuspects],
    truths: &BTreeMap<String, BTreeSet<MethodRef>>,
    k: usize,
    tolerance: u32,
) -> Result<usize, EvalError> {
    let mut count = 0;
    for result in results {
        let truth = truths
            .get(&result.bug_id)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| EvalError::MissingTruth(result.bug_id.clone()))?;
        if hit_at_k(&result.ranking, truth, k, tolerance) {
            count += 1;
        }
    }
    Ok(count)
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

/// A k-fold partition of the bug set; sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: u32,
    pub seed: u64,
    pub assignment: BTreeMap<String, u32>,
}

impl FoldPlan {
    pub fn fold_ids(&self, fold: u32) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn train_ids(&self, fold: u32) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, f)| **f != fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.k).map(|f| self.fold_ids(f).len()).collect()
    }
}

/// Deterministic per seed: shuffles the sorted ids and deals them
/// round-robin.
pub fn make_folds(bug_ids: &[String], k: u32, seed: u64) -> FoldPlan {
    let mut ids: Vec<String> = bug_ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i as u32 % k))
        .collect();
    FoldPlan {
        k,
        seed,
        assignment,
    }
}

// ---------------------------------------------------------------------------
// Ochiai baseline
// ---------------------------------------------------------------------------

/// Per-method execution spectrum: failing/passing runs covering and not
/// covering the method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumCounts {
    pub ef: u32,
    pub nf: u32,
    pub ep: u32,
    pub np: u32,
}

/// Ochiai suspiciousness: `ef / sqrt((ef+nf) * (ef+ep))`, zero when
/// undefined.
pub fn ochiai(counts: &SpectrumCounts) -> f64 {
    if counts.ef == 0 {
        return 0.0;
    }
    let denominator = ((counts.ef + counts.nf) as f64 * (counts.ef + counts.ep) as f64).sqrt();
    if denominator == 0.0 {
        0.0
    } else {
        counts.ef as f64 / denominator
    }
}

/// Spectrum counts for every method that appears in the bug's coverage.
pub fn spectrum_counts(bug: &BugCase) -> BTreeMap<MethodRef, SpectrumCounts> {
    let total_failing = bug.coverage.failing_tests().count() as u32;
    let total_passing = bug.coverage.passing_tests().count() as u32;
    let mut counts: BTreeMap<MethodRef, SpectrumCounts> = BTreeMap::new();
    for test in &bug.coverage.tests {
        for method in &test.covered {
            let entry = counts.entry(method.clone()).or_default();
            if test.passed {
                entry.ep += 1;
            } else {
                entry.ef += 1;
            }
        }
    }
    for entry in counts.values_mut() {
        entry.nf = total_failing - entry.ef;
        entry.np = total_passing - entry.ep;
    }
    counts
}

/// Ranks every covered method by Ochiai score descending, ties by class
/// name then declaration line ascending.
pub fn sbfl_rank(bug: &BugCase) -> RankedSuspects {
    let counts = spectrum_counts(bug);
    let mut scored: Vec<(MethodRef, f64)> =
        counts.iter().map(|(m, c)| (m.clone(), ochiai(c))).collect();
    scored.sort_by(|(ma, sa), (mb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ma.class_name().cmp(mb.class_name()))
            .then_with(|| ma.decl_line().cmp(&mb.decl_line()))
    });
    RankedSuspects {
        bug_id: bug.bug_id.clone(),
        ranking: scored.into_iter().map(|(m, _)| m).collect(),
        intermediates: Default::default(),
        telemetry: Telemetry::default(),
        degraded: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Overlap analysis
// ---------------------------------------------------------------------------

/// Counts the bugs in every exact membership region of up to three named
/// result sets. Region keys are the sorted member names joined by `&`;
/// region counts sum to the size of the union.
pub fn overlap_analysis(
    sets: &BTreeMap<String, BTreeSet<String>>,
) -> Result<BTreeMap<String, usize>, EvalError> {
    if sets.len() > 3 {
        return Err(EvalError::TooManySets(sets.len()));
    }
    let names: Vec<&String> = sets.keys().collect();
    let universe: BTreeSet<&String> = sets.values().flatten().collect();
    let mut regions: BTreeMap<String, usize> = BTreeMap::new();
    // Every non-empty membership combination gets a key, even when zero.
    for mask in 1u32..(1 << names.len()) {
        let members: Vec<&str> = names
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, n)| n.as_str())
            .collect();
        regions.insert(members.join("&"), 0);
    }
    for id in universe {
        let mut members: Vec<&str> = Vec::new();
        for name in &names {
            if sets[*name].contains(id) {
                members.push(name.as_str());
            }
        }
        *regions.get_mut(&members.join("&")).expect("region exists") += 1;
    }
    Ok(regions)
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub folds: u32,
    pub seed: u64,
    /// Build memory from all bugs and evaluate all bugs (leakage
    /// comparison mode).
    pub no_cv: bool,
    /// Line tolerance for ground-truth matching (0 with --strict-match).
    pub tolerance: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 5,
            seed: 17,
            no_cv: false,
            tolerance: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: u32,
    pub bug_ids: Vec<String>,
    pub acc1: usize,
    pub acc3: usize,
    pub acc5: usize,
    pub cost_micros: u64,
    pub time_micros: u64,
}

/// Everything an evaluation run produces before report formatting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub project_name: String,
    pub bug_count: usize,
    pub acc1: usize,
    pub acc3: usize,
    pub acc5: usize,
    pub per_fold: Vec<FoldSummary>,
    pub results: Vec<RankedSuspects>,
    /// Bugs whose ground-truth class survived the coverage pre-filter cap.
    pub truth_in_prefilter: usize,
    pub sbfl_acc: (usize, usize, usize),
    pub overlap: BTreeMap<String, usize>,
    pub overlap_sets: BTreeMap<String, usize>,
    pub cost: CostReport,
    pub memgen_logs: Vec<MemgenLog>,
}

fn truths_of(bugs: &[BugCase]) -> BTreeMap<String, BTreeSet<MethodRef>> {
    bugs.iter()
        .map(|b| (b.bug_id.clone(), b.ground_truth.clone()))
        .collect()
}

/// Runs the evaluation methodology: per fold, dynamic memory is built from
/// the other folds' bugs only, the fold is localized with it, and metrics
/// are summed over folds. `--no-cv` builds one memory from all bugs
/// instead.
///
/// When `out_dir` is given, per-bug result files are persisted as each fold
/// completes, so an aborted run leaves partial results on disk.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    snapshot: &ProjectSnapshot,
    bugs: &[BugCase],
    base_memory: &ExternalMemory,
    gateway: &Gateway,
    prompts: &PromptSet,
    pipeline_config: &PipelineConfig,
    toggles: StageToggles,
    memgen_config: &MemgenConfig,
    eval_config: &EvalConfig,
    out_dir: Option<&Path>,
) -> Result<EvalOutcome, EvalError> {
    cross_validate_tagged(
        snapshot,
        bugs,
        base_memory,
        gateway,
        prompts,
        pipeline_config,
        toggles,
        memgen_config,
        eval_config,
        out_dir,
        "",
    )
}

/// [`cross_validate`] with a tag prefix, keeping request tags unique when
/// several evaluations share one gateway (parameter sweeps).
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_tagged(
    snapshot: &ProjectSnapshot,
    bugs: &[BugCase],
    base_memory: &ExternalMemory,
    gateway: &Gateway,
    prompts: &PromptSet,
    pipeline_config: &PipelineConfig,
    toggles: StageToggles,
    memgen_config: &MemgenConfig,
    eval_config: &EvalConfig,
    out_dir: Option<&Path>,
    tag_prefix: &str,
) -> Result<EvalOutcome, EvalError> {
    let truths = truths_of(bugs);
    for bug in bugs {
        if bug.ground_truth.is_empty() {
            return Err(EvalError::MissingTruth(bug.bug_id.clone()));
        }
    }
    let by_id: BTreeMap<&str, &BugCase> = bugs.iter().map(|b| (b.bug_id.as_str(), b)).collect();
    let tolerance = eval_config.tolerance;

    let mut results: Vec<RankedSuspects> = Vec::new();
    let mut per_fold: Vec<FoldSummary> = Vec::new();
    let mut memgen_logs: Vec<MemgenLog> = Vec::new();

    let run_group = |group_ids: &[String],
                     train: Vec<&BugCase>,
                     guard_holdout: BTreeSet<String>,
                     label: u32,
                     tag_prefix: String,
                     memgen_seed: u64,
                     memgen_logs: &mut Vec<MemgenLog>|
     -> Result<(Vec<RankedSuspects>, u64, u64), EvalError> {
        let ledger_start = gateway.ledger_len();
        let memory = if toggles.dynamic_memory && !train.is_empty() {
            let training: Vec<BugCase> = train.into_iter().cloned().collect();
            let (memory, log) = build_dynamic_memory(
                snapshot,
                &training,
                &guard_holdout,
                base_memory,
                gateway,
                prompts,
                pipeline_config,
                toggles,
                &MemgenConfig {
                    seed: memgen_seed,
                    ..memgen_config.clone()
                },
                &tag_prefix,
            )?;
            memgen_logs.push(log);
            memory
        } else {
            base_memory.clone()
        };

        let ctx = PipelineContext {
            snapshot,
            memory: &memory,
            gateway,
            prompts,
            config: pipeline_config,
            toggles,
            tag_prefix: format!("{tag_prefix}eval:"),
        };
        let group_bugs: Vec<&BugCase> = group_ids.iter().map(|id| by_id[id.as_str()]).collect();
        let mut group_results = Vec::new();
        for outcome in localize_many(&ctx, &group_bugs) {
            match outcome {
                Ok(r) => group_results.push(r),
                Err(e) => {
                    return Err(EvalError::FoldFailed {
                        fold: label,
                        source: Box::new(e.into()),
                    })
                }
            }
        }
        let slice = &gateway.ledger()[ledger_start..];
        let cost: u64 = slice.iter().map(|e| e.cost_micros).sum();
        let time: u64 = slice.iter().map(|e| e.latency_micros).sum();
        Ok((group_results, cost, time))
    };

    if eval_config.no_cv {
        let all_ids: Vec<String> = bugs.iter().map(|b| b.bug_id.clone()).collect();
        // Training and evaluation intentionally coincide here, so the
        // leakage guard receives an empty holdout.
        let train: Vec<&BugCase> = bugs.iter().collect();
        let (mut group_results, cost, time) = run_group(
            &all_ids,
            train,
            BTreeSet::new(),
            0,
            format!("{tag_prefix}full:"),
            memgen_config.seed,
            &mut memgen_logs,
        )?;
        group_results.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
        if let Some(dir) = out_dir {
            persist_results(dir, &group_results)?;
        }
        per_fold.push(FoldSummary {
            fold: 0,
            bug_ids: all_ids,
            acc1: acc_at_k(&group_results, &truths, 1, tolerance)?,
            acc3: acc_at_k(&group_results, &truths, 3, tolerance)?,
            acc5: acc_at_k(&group_results, &truths, 5, tolerance)?,
            cost_micros: cost,
            time_micros: time,
        });
        results = group_results;
    } else {
        let ids: Vec<String> = bugs.iter().map(|b| b.bug_id.clone()).collect();
        let plan = make_folds(&ids, eval_config.folds, eval_config.seed);
        for fold in 0..plan.k {
            let fold_ids = plan.fold_ids(fold);
            if fold_ids.is_empty() {
                continue;
            }
            let train: Vec<&BugCase> = plan
                .train_ids(fold)
                .iter()
                .map(|id| by_id[id.as_str()])
                .collect();
            let (mut fold_results, cost, time) = run_group(
                &fold_ids,
                train,
                fold_ids.iter().cloned().collect(),
                fold,
                format!("{tag_prefix}fold{fold}:"),
                memgen_config.seed.wrapping_add(fold as u64),
                &mut memgen_logs,
            )?;
            fold_results.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
            if let Some(dir) = out_dir {
                persist_results(dir, &fold_results)?;
            }
            per_fold.push(FoldSummary {
                fold,
                bug_ids: fold_ids,
                acc1: acc_at_k(&fold_results, &truths, 1, tolerance)?,
                acc3: acc_at_k(&fold_results, &truths, 3, tolerance)?,
                acc5: acc_at_k(&fold_results, &truths, 5, tolerance)?,
                cost_micros: cost,
                time_micros: time,
            });
            results.extend(fold_results);
        }
        results.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
    }

    // The summed metric over folds.
    let acc1: usize = per_fold.iter().map(|f| f.acc1).sum();
    let acc3: usize = per_fold.iter().map(|f| f.acc3).sum();
    let acc5: usize = per_fold.iter().map(|f| f.acc5).sum();

    // Spectrum baseline over all bugs, and overlap at top-1 between the
    // pipeline and the baseline.
    let sbfl_results: Vec<RankedSuspects> = bugs.iter().map(sbfl_rank).collect();
    let sbfl_acc = (
        acc_at_k(&sbfl_results, &truths, 1, tolerance)?,
        acc_at_k(&sbfl_results, &truths, 3, tolerance)?,
        acc_at_k(&sbfl_results, &truths, 5, tolerance)?,
    );
    let solved = |set: &[RankedSuspects]| -> BTreeSet<String> {
        set.iter()
            .filter(|r| hit_at_k(&r.ranking, &truths[&r.bug_id], 1, tolerance))
            .map(|r| r.bug_id.clone())
            .collect()
    };
    let overlap_inputs = BTreeMap::from([
        ("MemFL".to_string(), solved(&results)),
        ("Ochiai".to_string(), solved(&sbfl_results)),
    ]);
    let overlap_sets = overlap_inputs
        .iter()
        .map(|(k, v)| (k.clone(), v.len()))
        .collect();
    let overlap = overlap_analysis(&overlap_inputs)?;

    // How many bugs keep their ground-truth class inside the pre-filter
    // cap (the class-reduction retention figure).
    let truth_in_prefilter = results
        .iter()
        .filter(|r| {
            let truth_classes = by_id[r.bug_id.as_str()].ground_truth_classes();
            r.intermediates
                .prefiltered_classes
                .iter()
                .any(|c| truth_classes.contains(c.as_str()))
        })
        .count();

    Ok(EvalOutcome {
        project_name: snapshot.project_name.clone(),
        bug_count: bugs.len(),
        acc1,
        acc3,
        acc5,
        per_fold,
        results,
        truth_in_prefilter,
        sbfl_acc,
        overlap,
        overlap_sets,
        cost: run_cost_report(&gateway.ledger()),
        memgen_logs,
    })
}

fn persist_results(dir: &Path, results: &[RankedSuspects]) -> Result<(), EvalError> {
    let results_dir = dir.join("results");
    fs::create_dir_all(&results_dir).map_err(|source| EvalError::Io {
        path: results_dir.clone(),
        source,
    })?;
    for result in results {
        let path = results_dir.join(format!("{}.json", result.bug_id));
        let text = serde_json::to_string_pretty(result).expect("result serializes");
        fs::write(&path, text + "\n").map_err(|source| EvalError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// Published per-project accuracy rows for one tool, bundled for report
/// juxtaposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineTool {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footnote: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_per_bug_dollars: Option<f64>,
    pub rows: Vec<BaselineRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRow {
    pub project: String,
    pub bugs: u32,
    pub top1: u32,
    pub top3: u32,
    pub top5: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineTable {
    pub tools: Vec<BaselineTool>,
}

/// The bundled reference table (Defects4J results reported for MemFL and
/// the usual baselines).
pub fn bundled_baselines() -> BaselineTable {
    serde_json::from_str(include_str!("../data/baselines.json"))
        .expect("bundled baseline table parses")
}

/// One `acc.csv` row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccRow {
    pub project: String,
    pub tool: String,
    pub bugs: u32,
    pub top1: u32,
    pub top3: u32,
    pub top5: u32,
}

/// Per-project rows plus an overall row per tool, in table order.
pub fn acc_rows_from_baselines(table: &BaselineTable) -> Vec<AccRow> {
    let mut rows = Vec::new();
    for tool in &table.tools {
        let mut overall = AccRow {
            project: "Overall".to_string(),
            tool: tool.name.clone(),
            bugs: 0,
            top1: 0,
            top3: 0,
            top5: 0,
        };
        for row in &tool.rows {
            rows.push(AccRow {
                project: row.project.clone(),
                tool: tool.name.clone(),
                bugs: row.bugs,
                top1: row.top1,
                top3: row.top3,
                top5: row.top5,
            });
            overall.bugs += row.bugs;
            overall.top1 += row.top1;
            overall.top3 += row.top3;
            overall.top5 += row.top5;
        }
        rows.push(overall);
    }
    rows
}

pub fn acc_rows_from_outcome(outcome: &EvalOutcome) -> Vec<AccRow> {
    let mut rows = Vec::new();
    for (tool, (a1, a3, a5)) in [
        ("MemFL", (outcome.acc1, outcome.acc3, outcome.acc5)),
        (
            "Ochiai",
            (outcome.sbfl_acc.0, outcome.sbfl_acc.1, outcome.sbfl_acc.2),
        ),
    ] {
        for project in [outcome.project_name.as_str(), "Overall"] {
            rows.push(AccRow {
                project: project.to_string(),
                tool: tool.to_string(),
                bugs: outcome.bug_count as u32,
                top1: a1 as u32,
                top3: a3 as u32,
                top5: a5 as u32,
            });
        }
    }
    rows
}

pub fn write_acc_csv(path: &Path, rows: &[AccRow]) -> Result<(), EvalError> {
    let mut text = String::from("project,tool,bugs,top1,top3,top5\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.project, r.tool, r.bugs, r.top1, r.top3, r.top5
        ));
    }
    write_text(path, &text)
}

/// Aligned text rendering of the same rows, for terminal reading.
pub fn write_acc_table(path: &Path, rows: &[AccRow]) -> Result<(), EvalError> {
    let mut text = format!(
        "{:<12} {:<22} {:>6} {:>6} {:>6} {:>6}\n",
        "project", "tool", "bugs", "top1", "top3", "top5"
    );
    for r in rows {
        text.push_str(&format!(
            "{:<12} {:<22} {:>6} {:>6} {:>6} {:>6}\n",
            r.project, r.tool, r.bugs, r.top1, r.top3, r.top5
        ));
    }
    write_text(path, &text)
}

fn micros_to_dollars(m: u64) -> String {
    format!("{:.6}", m as f64 / 1e6)
}

fn micros_to_seconds(m: u64) -> String {
    format!("{:.6}", m as f64 / 1e6)
}

pub fn write_cost_csv(path: &Path, cost: &CostReport) -> Result<(), EvalError> {
    let mut text =
        String::from("scope,name,calls,prompt_tokens,completion_tokens,cost_usd,time_s\n");
    let mut push = |scope: &str, name: &str, line: &crate::gateway::CostLine| {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            scope,
            name,
            line.calls,
            line.prompt_tokens,
            line.completion_tokens,
            micros_to_dollars(line.cost_micros),
            micros_to_seconds(line.time_micros)
        ));
    };
    for (step, line) in &cost.per_step {
        push("step", step, line);
    }
    for (bug, line) in &cost.per_bug {
        push("bug", bug, line);
    }
    push("total", "run", &cost.total);
    let mean = crate::gateway::CostLine {
        calls: cost.total.calls.checked_div(cost.bug_count).unwrap_or(0),
        prompt_tokens: 0,
        completion_tokens: 0,
        cost_micros: cost.mean_cost_per_bug_micros(),
        time_micros: cost.mean_time_per_bug_micros(),
    };
    text.push_str(&format!(
        "mean,per_bug,{},,,{},{}\n",
        mean.calls,
        micros_to_dollars(mean.cost_micros),
        micros_to_seconds(mean.time_micros)
    ));
    write_text(path, &text)
}

pub fn write_overlap_json(path: &Path, outcome: &EvalOutcome) -> Result<(), EvalError> {
    let doc = serde_json::json!({
        "k": 1,
        "sets": outcome.overlap_sets,
        "regions": outcome.overlap,
    });
    write_text(path, &(serde_json::to_string_pretty(&doc).unwrap() + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| EvalError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the full report directory for an evaluation outcome.
pub fn write_report(dir: &Path, outcome: &EvalOutcome) -> Result<(), EvalError> {
    let rows = acc_rows_from_outcome(outcome);
    write_acc_csv(&dir.join("acc.csv"), &rows)?;
    write_acc_table(&dir.join("acc.txt"), &rows)?;
    write_cost_csv(&dir.join("cost.csv"), &outcome.cost)?;
    write_overlap_json(&dir.join("overlap.json"), outcome)?;
    write_text(
        &dir.join("outcome.json"),
        &(serde_json::to_string_pretty(outcome).expect("outcome serializes") + "\n"),
    )?;
    persist_results(dir, &outcome.results)?;
    Ok(())
}
