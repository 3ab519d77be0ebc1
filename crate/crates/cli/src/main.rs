//! `memfl` — project-wide, method-level fault localization with an
//! external-memory LLM pipeline.
//!
//! Exit codes: 0 success, 1 validation error, 2 provider error, 3 completed
//! with degraded results written.

mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use memfl_core::eval::{
    acc_rows_from_baselines, acc_rows_from_outcome, bundled_baselines, cross_validate, EvalConfig,
    EvalError,
};
use memfl_core::gateway::GatewayError;
use memfl_core::index::{index_tree, load_bug_cases, IndexMode};
use memfl_core::memgen::{build_dynamic_memory, MemgenConfig, MemgenError};
use memfl_core::memory::{generate_static_memory, load_memory, save_memory, MemoryError};
use memfl_core::model::{BugCase, ExternalMemory, ProjectSnapshot};
use memfl_core::pipeline::{localize_many, PipelineContext, PipelineError, StageToggles};
use memfl_core::prompts::PromptSet;

#[derive(Parser)]
#[command(
    name = "memfl",
    version,
    about = "LLM fault localization with external memory"
)]
struct Cli {
    /// Config file (default: <project>/memfl.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Provider mode: live | replay | scripted (env MEMFL_PROVIDER).
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Model name sent to the provider.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Chat-completion base URL (env MEMFL_BASE_URL).
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Cassette file for the replay provider.
    #[arg(long, global = true)]
    cassette: Option<PathBuf>,
    /// Script file for the scripted provider.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Record every exchange to this cassette file.
    #[arg(long, global = true)]
    record_cassette: Option<PathBuf>,
    /// Root seed for all run randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent per-bug workers.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Reuse replies for identical prompts within the run.
    #[arg(long, global = true)]
    prompt_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProjectArgs {
    /// Project root directory.
    #[arg(long)]
    project: PathBuf,
    /// Ingestion mode.
    #[arg(long, default_value = "manifest", value_parser = ["manifest", "builtin"])]
    mode: String,
    /// Source extensions for builtin mode (repeatable).
    #[arg(long = "ext", default_value = "java")]
    extensions: Vec<String>,
}

impl ProjectArgs {
    fn index_mode(&self) -> IndexMode {
        match self.mode.as_str() {
            "manifest" => IndexMode::Manifest,
            _ => IndexMode::Builtin {
                extensions: self.extensions.clone(),
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Index the project and write the snapshot cache.
    Index {
        #[command(flatten)]
        project: ProjectArgs,
        /// Snapshot cache path (default <project>/.memfl/snapshot.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate static memory (class and project summaries).
    Summarize {
        #[command(flatten)]
        project: ProjectArgs,
        /// Memory file to create or refresh.
        #[arg(long)]
        memory: PathBuf,
    },
    /// Localize one bug or all bugs; one result file per bug.
    Localize {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long)]
        memory: PathBuf,
        /// Bug id, or "all".
        #[arg(long)]
        bug: String,
        #[arg(long)]
        out: PathBuf,
        /// Disable a stage: review | condense | dynamic (repeatable).
        #[arg(long = "ablate", value_parser = ["review", "condense", "dynamic"])]
        ablate: Vec<String>,
        /// Print every prompt instead of calling any provider.
        #[arg(long)]
        dry_run: bool,
        /// Directory of prompt template overrides.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Build dynamic memory from training bugs.
    Memgen {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long)]
        memory: PathBuf,
        /// "all", a comma-separated id list, or "fold:<i>/<k>".
        #[arg(long, default_value = "all")]
        train_bugs: String,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        iters: Option<u32>,
        /// Memgen event log (default: memgen-log.json next to the memory).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Cross-validated evaluation with Table-style reports.
    Eval {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        folds: Option<u32>,
        /// Build memory from all bugs and evaluate all bugs (no folds).
        #[arg(long)]
        no_cv: bool,
        #[arg(long = "ablate", value_parser = ["review", "condense", "dynamic"])]
        ablate: Vec<String>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        iters: Option<u32>,
        /// Exact line matching for ground truth (no +/-2 tolerance).
        #[arg(long)]
        strict_match: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render comparison tables from the bundled published results.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Merge rows from a previous eval report directory.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Batch-size x iteration sweep of memgen policies.
    Sweep {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long)]
        memory: PathBuf,
        /// Comma-separated batch sizes.
        #[arg(long, default_value = "1,2,5")]
        batches: String,
        /// Comma-separated iteration counts.
        #[arg(long, default_value = "1,2,3")]
        iters: String,
        #[arg(long)]
        folds: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn toggles_from(ablate: &[String]) -> StageToggles {
    StageToggles {
        bug_review: !ablate.iter().any(|a| a == "review"),
        condensation: !ablate.iter().any(|a| a == "condense"),
        dynamic_memory: !ablate.iter().any(|a| a == "dynamic"),
    }
}

/// Error classification for exit codes.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(g) = cause.downcast_ref::<GatewayError>() {
            return match g {
                GatewayError::Config(_) | GatewayError::Io { .. } => 1,
                _ => 2,
            };
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            if matches!(p, PipelineError::Provider(_)) {
                return 2;
            }
        }
        if let Some(m) = cause.downcast_ref::<MemgenError>() {
            if matches!(
                m,
                MemgenError::Provider(_) | MemgenError::Pipeline(PipelineError::Provider(_))
            ) {
                return 2;
            }
        }
        if cause.downcast_ref::<MemoryError>().is_some()
            || cause.downcast_ref::<EvalError>().is_some()
        {
            continue;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Usage problems are validation errors (exit 1); --help and
            // --version are successes.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            let code = classify(&err);
            let label = if code == 2 { "provider" } else { "validation" };
            eprintln!("error[{label}]: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn load_project(args: &ProjectArgs) -> Result<(ProjectSnapshot, Vec<BugCase>)> {
    let snapshot = index_tree(&args.project, &args.index_mode())?;
    let bugs = if args
        .project
        .join(memfl_core::index::MANIFEST_FILE)
        .is_file()
    {
        load_bug_cases(&snapshot, &args.project)?
    } else {
        Vec::new()
    };
    Ok((snapshot, bugs))
}

fn load_memory_for(snapshot: &ProjectSnapshot, path: &Path) -> Result<ExternalMemory> {
    let memory = load_memory(path, Some(&snapshot.index_fingerprint))?;
    if memory.static_part.class_summaries.is_empty() {
        bail!(
            "memory {} has no static part; run `memfl summarize` first",
            path.display()
        );
    }
    Ok(memory)
}

fn run(cli: Cli) -> Result<u8> {
    let over = config::Overrides {
        provider: cli.provider.clone(),
        model: cli.model.clone(),
        base_url: cli.base_url.clone(),
        cassette: cli.cassette.clone(),
        script: cli.script.clone(),
        record_cassette: cli.record_cassette.clone(),
        seed: cli.seed,
        workers: cli.workers,
        prompt_cache: cli.prompt_cache,
    };

    match cli.command {
        Command::Index { project, out } => {
            let (snapshot, bugs) = load_project(&project)?;
            let out = out.unwrap_or_else(|| project.project.join(".memfl/snapshot.json"));
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&out, serde_json::to_string_pretty(&snapshot)? + "\n")?;
            println!(
                "indexed {}: {} classes, {} methods, {} bugs; snapshot cache at {}",
                snapshot.project_name,
                snapshot.classes.len(),
                snapshot.method_count(),
                bugs.len(),
                out.display()
            );
            Ok(0)
        }

        Command::Summarize { project, memory } => {
            let (file_cfg, cfg_dir) =
                config::load_file_config(cli.config.as_deref(), Some(&project.project))?;
            let run_cfg = config::resolve(&file_cfg, &cfg_dir, &over);
            let (snapshot, _) = load_project(&project)?;
            let gateway = run_cfg.build_gateway()?;
            let prompts = PromptSet::default();
            let prior = load_memory(&memory, Some(&snapshot.index_fingerprint)).ok();
            let updated = generate_static_memory(
                &snapshot,
                &gateway,
                &prompts,
                &run_cfg.summarize_config(),
                prior.as_ref(),
            )?;
            save_memory(&memory, &updated)?;
            println!(
                "static memory for {}: {} class summaries, {} provider calls; written to {}",
                snapshot.project_name,
                updated.static_part.class_summaries.len(),
                gateway.ledger_len(),
                memory.display()
            );
            Ok(0)
        }

        Command::Localize {
            project,
            memory,
            bug,
            out,
            ablate,
            dry_run,
            prompts,
        } => {
            let (file_cfg, cfg_dir) =
                config::load_file_config(cli.config.as_deref(), Some(&project.project))?;
            let mut run_cfg = config::resolve(&file_cfg, &cfg_dir, &over);
            if dry_run {
                run_cfg.provider_mode = "null".to_string();
            }
            let (snapshot, bugs) = load_project(&project)?;
            let selected: Vec<&BugCase> = match bug.as_str() {
                "all" => bugs.iter().collect(),
                id => {
                    let found = bugs.iter().find(|b| b.bug_id == id);
                    vec![found.with_context(|| format!("bug {id} not found in the manifest"))?]
                }
            };
            let memory = load_memory_for(&snapshot, &memory)?;
            let gateway = run_cfg.build_gateway()?;
            let prompt_set = match &prompts {
                Some(dir) => PromptSet::with_overrides(dir)?,
                None => PromptSet::default(),
            };
            let ctx = PipelineContext {
                snapshot: &snapshot,
                memory: &memory,
                gateway: &gateway,
                prompts: &prompt_set,
                config: &run_cfg.pipeline,
                toggles: toggles_from(&ablate),
                tag_prefix: String::new(),
            };
            let results = localize_many(&ctx, &selected);
            std::fs::create_dir_all(&out)?;
            let mut degraded_count = 0usize;
            for result in results {
                let result = result?;
                if result.is_degraded() {
                    degraded_count += 1;
                }
                let path = out.join(format!("{}.json", result.bug_id));
                std::fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")?;
                println!(
                    "{}: {} suspects{} -> {}",
                    result.bug_id,
                    result.ranking.len(),
                    if result.is_degraded() {
                        " (degraded)"
                    } else {
                        ""
                    },
                    path.display()
                );
            }
            if dry_run {
                for exchange in gateway.ledger() {
                    println!("--- prompt [{}] ---", exchange.request.tag);
                    println!("{}", exchange.request.prompt_text());
                }
                println!(
                    "dry run: {} prompts rendered, zero provider calls",
                    gateway.ledger_len()
                );
            }
            Ok(if degraded_count > 0 { 3 } else { 0 })
        }

        Command::Memgen {
            project,
            memory,
            train_bugs,
            batch,
            iters,
            log,
        } => {
            let (file_cfg, cfg_dir) =
                config::load_file_config(cli.config.as_deref(), Some(&project.project))?;
            let run_cfg = config::resolve(&file_cfg, &cfg_dir, &over);
            let (snapshot, bugs) = load_project(&project)?;
            let (training, holdout) = parse_train_spec(&train_bugs, &bugs, run_cfg.seed)?;
            let base = load_memory_for(&snapshot, &memory)?;
            let gateway = run_cfg.build_gateway()?;
            let prompt_set = PromptSet::default();
            let memgen_cfg = MemgenConfig {
                batch_size: batch.unwrap_or(run_cfg.memgen_batch),
                iterations: iters.unwrap_or(run_cfg.memgen_iters),
                seed: run_cfg.seed,
                resample_each_iteration: run_cfg.memgen_resample,
            };
            let (updated, gen_log) = build_dynamic_memory(
                &snapshot,
                &training,
                &holdout,
                &base,
                &gateway,
                &prompt_set,
                &run_cfg.pipeline,
                StageToggles::default(),
                &memgen_cfg,
                "memgen:",
            )?;
            save_memory(&memory, &updated)?;
            let log_path = log.unwrap_or_else(|| {
                memory
                    .parent()
                    .unwrap_or_else(|| Path::new("."))
                    .join("memgen-log.json")
            });
            std::fs::write(&log_path, serde_json::to_string_pretty(&gen_log)? + "\n")?;
            println!(
                "dynamic memory v{} after {} iterations ({} events); log at {}",
                updated.version,
                gen_log.iterations_run,
                gen_log.events.len(),
                log_path.display()
            );
            Ok(0)
        }

        Command::Eval {
            project,
            memory,
            folds,
            no_cv,
            ablate,
            batch,
            iters,
            strict_match,
            out,
        } => {
            let (file_cfg, cfg_dir) =
                config::load_file_config(cli.config.as_deref(), Some(&project.project))?;
            let run_cfg = config::resolve(&file_cfg, &cfg_dir, &over);
            let (snapshot, bugs) = load_project(&project)?;
            if bugs.is_empty() {
                bail!("project has no bug entries to evaluate");
            }
            let base = load_memory_for(&snapshot, &memory)?;
            let gateway = run_cfg.build_gateway()?;
            let prompt_set = PromptSet::default();
            let memgen_cfg = MemgenConfig {
                batch_size: batch.unwrap_or(run_cfg.memgen_batch),
                iterations: iters.unwrap_or(run_cfg.memgen_iters),
                seed: run_cfg.seed,
                resample_each_iteration: run_cfg.memgen_resample,
            };
            let eval_cfg = EvalConfig {
                folds: folds.unwrap_or(run_cfg.eval_folds),
                seed: run_cfg.seed,
                no_cv,
                tolerance: if strict_match {
                    0
                } else {
                    run_cfg.eval_tolerance
                },
            };
            let outcome = cross_validate(
                &snapshot,
                &bugs,
                &base,
                &gateway,
                &prompt_set,
                &run_cfg.pipeline,
                toggles_from(&ablate),
                &memgen_cfg,
                &eval_cfg,
                Some(&out),
            )?;
            memfl_core::eval::write_report(&out, &outcome)?;
            println!(
                "{}: {} bugs, acc@1 {}, acc@3 {}, acc@5 {} (Ochiai top1 {}); cost ${:.6}, time {:.3}s",
                outcome.project_name,
                outcome.bug_count,
                outcome.acc1,
                outcome.acc3,
                outcome.acc5,
                outcome.sbfl_acc.0,
                outcome.cost.total.cost_micros as f64 / 1e6,
                outcome.cost.total.time_micros as f64 / 1e6,
            );
            println!(
                "ground truth retained by the class pre-filter: {}/{} bugs",
                outcome.truth_in_prefilter, outcome.bug_count
            );
            println!("report written to {}", out.display());
            let degraded = outcome.results.iter().filter(|r| r.is_degraded()).count();
            Ok(if degraded > 0 { 3 } else { 0 })
        }

        Command::Report { out, results } => {
            let table = bundled_baselines();
            let mut rows = Vec::new();
            if let Some(dir) = &results {
                let outcome_path = dir.join("outcome.json");
                if outcome_path.is_file() {
                    let outcome: memfl_core::eval::EvalOutcome =
                        serde_json::from_str(&std::fs::read_to_string(&outcome_path)?)?;
                    rows.extend(acc_rows_from_outcome(&outcome));
                }
            }
            rows.extend(acc_rows_from_baselines(&table));
            std::fs::create_dir_all(&out)?;
            memfl_core::eval::write_acc_csv(&out.join("acc.csv"), &rows)?;
            memfl_core::eval::write_acc_table(&out.join("acc.txt"), &rows)?;
            let mut cost = String::from("tool,cost_per_bug_usd\n");
            for tool in &table.tools {
                if let Some(c) = tool.cost_per_bug_dollars {
                    cost.push_str(&format!("{},{c}\n", tool.name));
                }
            }
            std::fs::write(out.join("cost_reference.csv"), cost)?;
            let footnotes: Vec<String> = table
                .tools
                .iter()
                .filter_map(|t| t.footnote.as_ref().map(|f| format!("{}: {f}", t.name)))
                .collect();
            if !footnotes.is_empty() {
                std::fs::write(out.join("footnotes.txt"), footnotes.join("\n") + "\n")?;
            }
            println!("comparison tables written to {}", out.display());
            Ok(0)
        }

        Command::Sweep {
            project,
            memory,
            batches,
            iters,
            folds,
            out,
        } => {
            let (file_cfg, cfg_dir) =
                config::load_file_config(cli.config.as_deref(), Some(&project.project))?;
            let run_cfg = config::resolve(&file_cfg, &cfg_dir, &over);
            let (snapshot, bugs) = load_project(&project)?;
            let base = load_memory_for(&snapshot, &memory)?;
            let gateway = run_cfg.build_gateway()?;
            let prompt_set = PromptSet::default();
            let batch_sizes = parse_list(&batches)?;
            let iter_counts = parse_list(&iters)?;
            let eval_cfg = EvalConfig {
                folds: folds.unwrap_or(run_cfg.eval_folds),
                seed: run_cfg.seed,
                no_cv: false,
                tolerance: run_cfg.eval_tolerance,
            };
            std::fs::create_dir_all(&out)?;
            let mut csv = String::from("batch,iters,top1,top3,top5,cost_usd\n");
            for &batch in &batch_sizes {
                for &iterations in &iter_counts {
                    let memgen_cfg = MemgenConfig {
                        batch_size: batch as usize,
                        iterations: iterations as u32,
                        seed: run_cfg.seed,
                        resample_each_iteration: run_cfg.memgen_resample,
                    };
                    let before = gateway.ledger_len();
                    let outcome = memfl_core::eval::cross_validate_tagged(
                        &snapshot,
                        &bugs,
                        &base,
                        &gateway,
                        &prompt_set,
                        &run_cfg.pipeline,
                        StageToggles::default(),
                        &memgen_cfg,
                        &eval_cfg,
                        None,
                        &format!("b{batch}i{iterations}:"),
                    )?;
                    let cost: u64 = gateway.ledger()[before..]
                        .iter()
                        .map(|e| e.cost_micros)
                        .sum();
                    csv.push_str(&format!(
                        "{batch},{iterations},{},{},{},{:.6}\n",
                        outcome.acc1,
                        outcome.acc3,
                        outcome.acc5,
                        cost as f64 / 1e6
                    ));
                    println!(
                        "batch {batch} iters {iterations}: acc@1 {} acc@3 {} acc@5 {}",
                        outcome.acc1, outcome.acc3, outcome.acc5
                    );
                }
            }
            std::fs::write(out.join("sweep.csv"), csv)?;
            println!("sweep table written to {}", out.join("sweep.csv").display());
            Ok(0)
        }
    }
}

fn parse_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| anyhow::anyhow!("bad list entry {t:?}: {e}"))
        })
        .collect()
}

/// `all` | `id1,id2,...` | `fold:<i>/<k>` (training = everything outside
/// fold i under the run seed).
fn parse_train_spec(
    spec: &str,
    bugs: &[BugCase],
    seed: u64,
) -> Result<(Vec<BugCase>, BTreeSet<String>)> {
    let all_ids: Vec<String> = bugs.iter().map(|b| b.bug_id.clone()).collect();
    if spec == "all" {
        return Ok((bugs.to_vec(), BTreeSet::new()));
    }
    if let Some(rest) = spec.strip_prefix("fold:") {
        let (i, k) = rest
            .split_once('/')
            .context("fold spec must look like fold:<i>/<k>")?;
        let fold: u32 = i.parse().context("fold index")?;
        let folds: u32 = k.parse().context("fold count")?;
        if fold >= folds {
            bail!("fold index {fold} out of range for {folds} folds");
        }
        let plan = memfl_core::eval::make_folds(&all_ids, folds, seed);
        let holdout: BTreeSet<String> = plan.fold_ids(fold).into_iter().collect();
        let training: Vec<BugCase> = bugs
            .iter()
            .filter(|b| !holdout.contains(&b.bug_id))
            .cloned()
            .collect();
        return Ok((training, holdout));
    }
    let wanted: BTreeSet<&str> = spec.split(',').map(str::trim).collect();
    let training: Vec<BugCase> = bugs
        .iter()
        .filter(|b| wanted.contains(b.bug_id.as_str()))
        .cloned()
        .collect();
    if training.len() != wanted.len() {
        let known: BTreeSet<&str> = bugs.iter().map(|b| b.bug_id.as_str()).collect();
        let missing: Vec<&&str> = wanted.difference(&known).collect();
        bail!("unknown training bug ids: {missing:?}");
    }
    let holdout: BTreeSet<String> = bugs
        .iter()
        .filter(|b| !wanted.contains(b.bug_id.as_str()))
        .map(|b| b.bug_id.clone())
        .collect();
    Ok((training, holdout))
}
