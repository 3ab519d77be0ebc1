//! Layered run configuration: flags > environment > config file > defaults.
//!
//! The config file is a `memfl.toml` at the project root (or wherever
//! `--config` points); relative paths inside it resolve against its own
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use memfl_core::gateway::{
    Gateway, GatewayConfig, LiveProvider, PriceTable, Provider, ReplayProvider, RetryPolicy,
    ScriptEntry, ScriptedProvider,
};
use memfl_core::memory::SummarizeConfig;
use memfl_core::pipeline::PipelineConfig;
use serde::Deserialize;

pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub provider: ProviderSection,
    /// Dollars per one million tokens.
    #[serde(default)]
    pub prices: BTreeMap<String, PriceEntry>,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub memgen: MemgenSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub mode: Option<String>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub cassette: Option<String>,
    pub script: Option<String>,
    pub request_limit: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceEntry {
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub prefilter_cap: Option<usize>,
    pub stage1_cap: Option<usize>,
    pub stage2_cap: Option<usize>,
    pub methods_per_class_cap: Option<usize>,
    pub ranking_cap: Option<usize>,
    pub prompt_budget_tokens: Option<u64>,
    pub summary_budget_tokens: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemgenSection {
    pub batch: Option<usize>,
    pub iters: Option<u32>,
    pub seed: Option<u64>,
    pub resample: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub folds: Option<u32>,
    pub seed: Option<u64>,
    pub tolerance: Option<u32>,
}

/// Global CLI options that interact with the config file and environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub provider: Option<String>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub cassette: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub record_cassette: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub prompt_cache: bool,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub provider_mode: String,
    pub model: String,
    pub base_url: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub cassette: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub record_cassette: Option<PathBuf>,
    pub request_limit: usize,
    pub prompt_cache: bool,
    pub prices: PriceTable,
    pub pipeline: PipelineConfig,
    pub summary_budget_tokens: u64,
    pub memgen_batch: usize,
    pub memgen_iters: u32,
    pub memgen_resample: bool,
    /// Root seed; all run randomness derives from it.
    pub seed: u64,
    pub eval_folds: u32,
    pub eval_tolerance: u32,
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

/// Loads `path` when given, else `<project>/memfl.toml` when present.
pub fn load_file_config(
    explicit: Option<&Path>,
    project: Option<&Path>,
) -> Result<(FileConfig, Option<PathBuf>)> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => project
            .map(|p| p.join("memfl.toml"))
            .filter(|p| p.is_file()),
    };
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .with_context(|| format!("reading config {}", p.display()))?;
            let parsed: FileConfig =
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf);
            Ok((parsed, base))
        }
        None => Ok((FileConfig::default(), None)),
    }
}

fn resolve_path(base: &Option<PathBuf>, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        return p;
    }
    match base {
        Some(b) => b.join(p),
        None => p,
    }
}

pub fn resolve(file: &FileConfig, config_dir: &Option<PathBuf>, over: &Overrides) -> RunConfig {
    let mut prices = PriceTable::default();
    for (model, entry) in &file.prices {
        prices = prices.with_price(model, entry.input, entry.output);
    }
    let provider_mode = over
        .provider
        .clone()
        .or_else(|| env_var("MEMFL_PROVIDER"))
        .or_else(|| file.provider.mode.clone())
        .unwrap_or_else(|| "live".to_string());
    let seed = over
        .seed
        .or(file.memgen.seed)
        .or(file.eval.seed)
        .unwrap_or(17);

    let defaults = PipelineConfig::default();
    let p = &file.pipeline;
    let pipeline = PipelineConfig {
        model: over
            .model
            .clone()
            .or_else(|| file.provider.model.clone())
            .unwrap_or_else(|| DEFAULT_MODEL.to_string()),
        temperature: file.provider.temperature.unwrap_or(0.0),
        max_output_tokens: file.provider.max_output_tokens.unwrap_or(1024),
        prefilter_cap: p.prefilter_cap.unwrap_or(defaults.prefilter_cap),
        stage1_cap: p.stage1_cap.unwrap_or(defaults.stage1_cap),
        stage2_cap: p.stage2_cap.unwrap_or(defaults.stage2_cap),
        methods_per_class_cap: p
            .methods_per_class_cap
            .unwrap_or(defaults.methods_per_class_cap),
        ranking_cap: p.ranking_cap.unwrap_or(defaults.ranking_cap),
        prompt_budget_tokens: p
            .prompt_budget_tokens
            .unwrap_or(defaults.prompt_budget_tokens),
        workers: over.workers.or(p.workers).unwrap_or(defaults.workers),
    };

    RunConfig {
        provider_mode,
        model: pipeline.model.clone(),
        base_url: over
            .base_url
            .clone()
            .or_else(|| env_var("MEMFL_BASE_URL"))
            .or_else(|| file.provider.base_url.clone())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
        temperature: pipeline.temperature,
        max_output_tokens: pipeline.max_output_tokens,
        cassette: over.cassette.clone().or_else(|| {
            file.provider
                .cassette
                .as_ref()
                .map(|v| resolve_path(config_dir, v))
        }),
        script: over.script.clone().or_else(|| {
            file.provider
                .script
                .as_ref()
                .map(|v| resolve_path(config_dir, v))
        }),
        record_cassette: over.record_cassette.clone(),
        request_limit: file.provider.request_limit.unwrap_or(4),
        prompt_cache: over.prompt_cache,
        prices,
        summary_budget_tokens: file
            .pipeline
            .summary_budget_tokens
            .unwrap_or(memfl_core::memory::SUMMARY_BUDGET_TOKENS),
        memgen_batch: file.memgen.batch.unwrap_or(5),
        memgen_iters: file.memgen.iters.unwrap_or(3),
        memgen_resample: file.memgen.resample.unwrap_or(false),
        seed,
        eval_folds: file.eval.folds.unwrap_or(5),
        eval_tolerance: file.eval.tolerance.unwrap_or(2),
        pipeline,
    }
}

impl RunConfig {
    pub fn summarize_config(&self) -> SummarizeConfig {
        SummarizeConfig {
            model: self.model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            budget_tokens: self.summary_budget_tokens,
        }
    }

    /// Builds the provider and wraps it in a gateway.
    pub fn build_gateway(&self) -> Result<Gateway> {
        let provider: Box<dyn Provider> = match self.provider_mode.as_str() {
            "live" => {
                let key = env_var("MEMFL_API_KEY")
                    .context("live provider requires MEMFL_API_KEY in the environment")?;
                Box::new(LiveProvider::new(
                    &self.base_url,
                    key,
                    RetryPolicy::default(),
                    self.seed,
                ))
            }
            "replay" => {
                let path = self.cassette.as_ref().context(
                    "replay provider requires --cassette (or provider.cassette in config)",
                )?;
                Box::new(ReplayProvider::from_file(path)?)
            }
            "scripted" => {
                let path = self.script.as_ref().context(
                    "scripted provider requires --script (or provider.script in config)",
                )?;
                Box::new(ScriptedProvider::from_file(path)?)
            }
            "null" => Box::new(ScriptedProvider::new(vec![
                ScriptEntry::new("*", "").sticky()
            ])),
            other => bail!("unknown provider mode {other:?} (expected live|replay|scripted)"),
        };
        Ok(Gateway::new(
            provider,
            GatewayConfig {
                prices: self.prices.clone(),
                request_limit: self.request_limit,
                enable_prompt_cache: self.prompt_cache,
                record_cassette: self.record_cassette.clone(),
            },
        )?)
    }
}
