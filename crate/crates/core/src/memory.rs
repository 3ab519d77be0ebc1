//! Static memory generation and the versioned external-memory store.
//!
//! Class summaries are produced one provider call per class, chunk-wise with
//! a final merge when a class exceeds the summarization budget, and cached
//! by class content hash. The project summary aggregates class summaries,
//! hierarchically (groups of 20) when the aggregate exceeds the budget.
//!
//! The on-disk format is a single UTF-8 JSON document with an embedded
//! content hash; loading verifies it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimate_tokens;
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message};
use crate::model::{
    ClassRecord, ExternalMemory, PipelineStep, ProjectSnapshot, RefinementEvent, StaticMemory,
};
use crate::prompts::{render, PromptSet, Values};

/// Default token budget per summarization prompt (byte-heuristic tokens).
pub const SUMMARY_BUDGET_TOKENS: u64 = 6000;

/// Group size for hierarchical project-summary merging.
const PROJECT_GROUP_SIZE: usize = 20;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("memory file {0} not found")]
    NotFound(PathBuf),
    #[error("memory file {path} is corrupt: {reason}")]
    CorruptMemoryFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Model/request settings shared by all memory-generation calls.
#[derive(Debug, Clone)]
pub struct SummarizeConfig {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub budget_tokens: u64,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        SummarizeConfig {
            model: "gpt-4o-mini".to_string(),
            temperature: 0.0,
            max_output_tokens: 1024,
            budget_tokens: SUMMARY_BUDGET_TOKENS,
        }
    }
}

fn one_call(
    gateway: &Gateway,
    cfg: &SummarizeConfig,
    tag: String,
    prompt: String,
) -> Result<String, MemoryError> {
    let exchange = gateway.complete(ChatRequest {
        model: cfg.model.clone(),
        messages: vec![Message::user(prompt)],
        temperature: cfg.temperature,
        max_output_tokens: cfg.max_output_tokens,
        tag,
        step: "static".to_string(),
        bug_id: None,
    })?;
    Ok(exchange.reply_text)
}

/// Per-class summaries plus the content hashes they were generated from.
pub type ClassSummaries = (BTreeMap<String, String>, BTreeMap<String, String>);

/// Generates one summary per class, reusing `prior` entries whose class
/// content hash is unchanged (zero provider calls for those).
pub fn generate_class_summaries(
    snapshot: &ProjectSnapshot,
    gateway: &Gateway,
    prompts: &PromptSet,
    cfg: &SummarizeConfig,
    prior: Option<&StaticMemory>,
) -> Result<ClassSummaries, MemoryError> {
    if snapshot.classes.is_empty() {
        return Err(MemoryError::InvalidInput("snapshot has no classes".into()));
    }
    let mut summaries = BTreeMap::new();
    let mut hashes = BTreeMap::new();
    for class in &snapshot.classes {
        let hash = class.content_hash();
        let cached = prior.and_then(|p| {
            (p.class_hashes.get(&class.name) == Some(&hash))
                .then(|| p.class_summaries.get(&class.name).cloned())
                .flatten()
        });
        let summary = match cached {
            Some(s) => s,
            None => summarize_class(snapshot, class, gateway, prompts, cfg)?,
        };
        summaries.insert(class.name.clone(), summary);
        hashes.insert(class.name.clone(), hash);
    }
    Ok((summaries, hashes))
}

fn summarize_class(
    snapshot: &ProjectSnapshot,
    class: &ClassRecord,
    gateway: &Gateway,
    prompts: &PromptSet,
    cfg: &SummarizeConfig,
) -> Result<String, MemoryError> {
    let whole = render(
        "class_summary",
        &prompts.class_summary,
        &Values::new()
            .set("project_name", &snapshot.project_name)
            .set("class_name", &class.name)
            .set("file", &class.file)
            .set("class_source", &class.source_text)
            .0,
    )?;
    if estimate_tokens(&whole) <= cfg.budget_tokens {
        return one_call(gateway, cfg, format!("static:class:{}", class.name), whole);
    }

    // Chunk method groups under the budget, then merge.
    let overhead = estimate_tokens(&prompts.class_summary_chunk) + 200;
    let per_chunk = cfg.budget_tokens.saturating_sub(overhead).max(1);
    let mut chunks: Vec<String> = Vec::new();
    let mut current = String::new();
    for method in &class.methods {
        let mut text = method.body_text.clone();
        if estimate_tokens(&text) > per_chunk {
            log::warn!(
                "method {} exceeds the summarization budget alone; using signature and doc only",
                method.method_ref
            );
            text = match &method.doc_text {
                Some(doc) => format!("{}\n// {}", method.signature(), doc),
                None => method.signature().to_string(),
            };
        }
        if !current.is_empty() && estimate_tokens(&current) + estimate_tokens(&text) > per_chunk {
            chunks.push(std::mem::take(&mut current));
        }
        if !current.is_empty() {
            current.push_str("\n\n");
        }
        current.push_str(&text);
    }
    if !current.is_empty() {
        chunks.push(current);
    }

    let chunk_count = chunks.len();
    let mut chunk_summaries = Vec::new();
    for (i, chunk) in chunks.into_iter().enumerate() {
        let prompt = render(
            "class_summary_chunk",
            &prompts.class_summary_chunk,
            &Values::new()
                .set("project_name", &snapshot.project_name)
                .set("class_name", &class.name)
                .set("chunk_index", (i + 1).to_string())
                .set("chunk_count", chunk_count.to_string())
                .set("chunk_source", chunk)
                .0,
        )?;
        let tag = format!("static:class:{}:chunk{}", class.name, i + 1);
        chunk_summaries.push(one_call(gateway, cfg, tag, prompt)?);
    }
    let merge_prompt = render(
        "class_summary_merge",
        &prompts.class_summary_merge,
        &Values::new()
            .set("project_name", &snapshot.project_name)
            .set("class_name", &class.name)
            .set("chunk_summaries", chunk_summaries.join("\n\n"))
            .0,
    )?;
    one_call(
        gateway,
        cfg,
        format!("static:class:{}:merge", class.name),
        merge_prompt,
    )
}

/// Generates the project summary from the aggregated class summaries.
pub fn generate_project_summary(
    project_name: &str,
    class_summaries: &BTreeMap<String, String>,
    gateway: &Gateway,
    prompts: &PromptSet,
    cfg: &SummarizeConfig,
) -> Result<String, MemoryError> {
    if class_summaries.is_empty() {
        return Err(MemoryError::InvalidInput(
            "no class summaries to aggregate".into(),
        ));
    }
    let aggregated = class_summaries
        .iter()
        .map(|(name, s)| format!("### {name}\n{s}"))
        .collect::<Vec<_>>()
        .join("\n\n");
    let whole = render(
        "project_summary",
        &prompts.project_summary,
        &Values::new()
            .set("project_name", project_name)
            .set("class_summaries", &aggregated)
            .0,
    )?;
    if estimate_tokens(&whole) <= cfg.budget_tokens {
        return one_call(gateway, cfg, "static:project".to_string(), whole);
    }

    let entries: Vec<String> = class_summaries
        .iter()
        .map(|(name, s)| format!("### {name}\n{s}"))
        .collect();
    let group_count = entries.len().div_ceil(PROJECT_GROUP_SIZE);
    let mut group_summaries = Vec::new();
    for (i, group) in entries.chunks(PROJECT_GROUP_SIZE).enumerate() {
        let prompt = render(
            "project_summary_group",
            &prompts.project_summary_group,
            &Values::new()
                .set("project_name", project_name)
                .set("group_index", (i + 1).to_string())
                .set("group_count", group_count.to_string())
                .set("class_summaries", group.join("\n\n"))
                .0,
        )?;
        group_summaries.push(one_call(
            gateway,
            cfg,
            format!("static:project:group{}", i + 1),
            prompt,
        )?);
    }
    let merge = render(
        "project_summary_merge",
        &prompts.project_summary_merge,
        &Values::new()
            .set("project_name", project_name)
            .set("group_summaries", group_summaries.join("\n\n"))
            .0,
    )?;
    one_call(gateway, cfg, "static:project:merge".to_string(), merge)
}

/// Builds or refreshes the static part of the memory against a snapshot.
pub fn generate_static_memory(
    snapshot: &ProjectSnapshot,
    gateway: &Gateway,
    prompts: &PromptSet,
    cfg: &SummarizeConfig,
    prior: Option<&ExternalMemory>,
) -> Result<ExternalMemory, MemoryError> {
    let (class_summaries, class_hashes) = generate_class_summaries(
        snapshot,
        gateway,
        prompts,
        cfg,
        prior.map(|m| &m.static_part),
    )?;
    let project_summary = generate_project_summary(
        &snapshot.project_name,
        &class_summaries,
        gateway,
        prompts,
        cfg,
    )?;
    let mut memory = prior.cloned().unwrap_or_default();
    memory.static_part = StaticMemory {
        project_summary,
        class_summaries,
        class_hashes,
    };
    memory.snapshot_fingerprint = snapshot.index_fingerprint.clone();
    Ok(memory)
}

/// A refinement decision for one step's guidance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Refinement {
    NoUpdate,
    Replace(String),
}

/// Metadata recorded with an accepted refinement.
#[derive(Debug, Clone)]
pub struct RefinementMeta {
    pub bug_id: String,
    pub iteration: u32,
}

/// Applies one refinement: `NoUpdate` is a fixed point (same version, same
/// fingerprint); a replacement touches exactly one step's guidance, bumps
/// the version by one, and appends a provenance event.
pub fn apply_refinement(
    memory: &ExternalMemory,
    step: PipelineStep,
    refinement: &Refinement,
    meta: &RefinementMeta,
) -> ExternalMemory {
    match refinement {
        Refinement::NoUpdate => memory.clone(),
        Refinement::Replace(guidance) => {
            let mut next = memory.clone();
            next.dynamic_part.set(step, guidance.clone());
            next.version += 1;
            next.provenance.push(RefinementEvent {
                step,
                bug_id: meta.bug_id.clone(),
                iteration: meta.iteration,
            });
            next
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MemoryFile {
    #[serde(flatten)]
    memory: ExternalMemory,
    content_hash: String,
}

fn content_hash(memory: &ExternalMemory) -> String {
    let doc = serde_json::to_vec(memory).expect("memory serializes");
    let mut hasher = Sha256::new();
    hasher.update(&doc);
    hex::encode(hasher.finalize())
}

/// Writes `memory.json`: the memory document plus an embedded content hash.
pub fn save_memory(path: &Path, memory: &ExternalMemory) -> Result<(), MemoryError> {
    let file = MemoryFile {
        memory: memory.clone(),
        content_hash: content_hash(memory),
    };
    let text = serde_json::to_string_pretty(&file).expect("memory serializes");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| MemoryError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, text + "\n").map_err(|source| MemoryError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and verifies `memory.json`. A fingerprint mismatch against
/// `expected_snapshot` is a soft failure: it warns and proceeds.
pub fn load_memory(
    path: &Path,
    expected_snapshot: Option<&str>,
) -> Result<ExternalMemory, MemoryError> {
    if !path.is_file() {
        return Err(MemoryError::NotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| MemoryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: MemoryFile =
        serde_json::from_str(&text).map_err(|e| MemoryError::CorruptMemoryFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let expected = content_hash(&file.memory);
    if file.content_hash != expected {
        return Err(MemoryError::CorruptMemoryFile {
            path: path.to_path_buf(),
            reason: format!(
                "content hash mismatch: stored {}, computed {expected}",
                file.content_hash
            ),
        });
    }
    if let Some(fp) = expected_snapshot {
        if !file.memory.snapshot_fingerprint.is_empty() && file.memory.snapshot_fingerprint != fp {
            log::warn!(
                "memory {} was generated from a different snapshot (stale static memory?)",
                path.display()
            );
        }
    }
    Ok(file.memory)
}
