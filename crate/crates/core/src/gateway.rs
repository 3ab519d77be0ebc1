//! Single choke-point for all model access.
//!
//! Every provider call flows through [`Gateway::complete`]: the gateway
//! dispatches to the configured provider (live HTTP, deterministic cassette
//! replay, or a scripted queue for tests), applies the optional prompt
//! cache, records the exchange in the run ledger, and prices it from the
//! active price table.
//!
//! Costs are integer micro-dollars so totals are exactly additive. With one
//! dollar per million tokens, one token costs exactly one micro-dollar.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimate_tokens;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider unavailable after {attempts} attempts: {last_error}")]
    ProviderUnavailable { attempts: u32, last_error: String },
    #[error("cassette miss for tag {tag:?} (prompt hash {hash})")]
    CassetteMiss { tag: String, hash: String },
    #[error("scripted provider exhausted: no entry matches tag {tag:?}")]
    ScriptExhausted { tag: String },
    #[error("gateway configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One chat message. Role is "system", "user", or "assistant".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".to_string(),
            content: content.into(),
        }
    }
}

/// A provider request. `tag` identifies the call site (step, bug, sequence)
/// and must be unique within a run; cassettes key on `tag` plus the prompt
/// hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: String,
    /// Accounting label: review, condense1..3, confirm, static, report,
    /// refine, ...
    pub step: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug_id: Option<String>,
}

impl ChatRequest {
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Content hash covering model, temperature, and all messages, so stale
    /// cassettes never match after a config change.
    pub fn prompt_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model.as_bytes());
        hasher.update([0]);
        hasher.update(format!("{:.4}", self.temperature).as_bytes());
        hasher.update([0]);
        for m in &self.messages {
            hasher.update(m.role.as_bytes());
            hasher.update([0]);
            hasher.update(m.content.as_bytes());
            hasher.update([0]);
        }
        hex::encode(hasher.finalize())
    }
}

/// One completed provider round-trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub reply_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Microseconds spent in the provider (zero for replay/scripted).
    pub latency_micros: u64,
    /// Micro-dollars under the active price table.
    pub cost_micros: u64,
    /// Transient failures retried before this reply.
    pub retries: u32,
    /// Reply served from the prompt cache without a provider call.
    pub cached: bool,
}

/// Dollars per million tokens, stored as integer micro-dollars per million
/// tokens (= micro-dollars per token when divided by one million).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTable {
    /// model -> (input, output) micro-dollars per 1M tokens.
    pub prices: std::collections::BTreeMap<String, (u64, u64)>,
}

impl PriceTable {
    pub fn with_price(
        mut self,
        model: &str,
        in_per_1m_dollars: f64,
        out_per_1m_dollars: f64,
    ) -> Self {
        self.prices.insert(
            model.to_string(),
            (
                (in_per_1m_dollars * 1e6).round() as u64,
                (out_per_1m_dollars * 1e6).round() as u64,
            ),
        );
        self
    }

    /// Rounded to the nearest micro-dollar per component.
    pub fn cost_micros(&self, model: &str, prompt_tokens: u64, completion_tokens: u64) -> u64 {
        let (pin, pout) = self.prices.get(model).copied().unwrap_or((0, 0));
        let side = |tokens: u64, per_1m: u64| -> u64 {
            ((tokens as u128 * per_1m as u128 + 500_000) / 1_000_000) as u64
        };
        side(prompt_tokens, pin) + side(completion_tokens, pout)
    }
}

/// What a provider returns; token counts fall back to the byte heuristic
/// when absent.
#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub retries: u32,
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError>;
    fn name(&self) -> &'static str;
    /// True when replies come from the network rather than local state.
    fn is_live(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// Scripted provider
// ---------------------------------------------------------------------------

/// One scripted reply. `pattern` is a substring match on the request tag
/// (`"*"` matches everything). Non-sticky entries are consumed by the first
/// matching request; sticky entries answer any number of matches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub pattern: String,
    pub reply: String,
    #[serde(default)]
    pub sticky: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

impl ScriptEntry {
    pub fn new(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        ScriptEntry {
            pattern: pattern.into(),
            reply: reply.into(),
            sticky: false,
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    pub fn sticky(mut self) -> Self {
        self.sticky = true;
        self
    }

    fn matches(&self, tag: &str) -> bool {
        self.pattern == "*" || tag.contains(&self.pattern)
    }
}

/// Test/CLI provider returning queued replies matched by tag pattern.
pub struct ScriptedProvider {
    entries: Mutex<Vec<ScriptEntry>>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedProvider {
            entries: Mutex::new(entries),
        }
    }

    /// Loads a JSON array of entries.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("script {}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.entries.lock().unwrap().len()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let mut entries = self.entries.lock().unwrap();
        let idx = entries
            .iter()
            .position(|e| e.matches(&request.tag))
            .ok_or_else(|| GatewayError::ScriptExhausted {
                tag: request.tag.clone(),
            })?;
        let entry = if entries[idx].sticky {
            entries[idx].clone()
        } else {
            entries.remove(idx)
        };
        Ok(ProviderReply {
            text: entry.reply,
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
            retries: 0,
        })
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

// ---------------------------------------------------------------------------
// Replay provider (cassettes)
// ---------------------------------------------------------------------------

/// One cassette line: UTF-8 JSON-lines, one exchange per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteLine {
    pub tag: String,
    pub prompt_hash: String,
    pub reply: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Deterministic provider answering from a recorded cassette, keyed by
/// request tag + prompt hash.
pub struct ReplayProvider {
    entries: HashMap<(String, String), CassetteLine>,
}

impl ReplayProvider {
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CassetteLine = serde_json::from_str(line).map_err(|e| {
                GatewayError::Config(format!("cassette {} line {}: {e}", path.display(), i + 1))
            })?;
            entries.insert((parsed.tag.clone(), parsed.prompt_hash.clone()), parsed);
        }
        Ok(ReplayProvider { entries })
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let hash = request.prompt_hash();
        let key = (request.tag.clone(), hash.clone());
        let line = self.entries.get(&key).ok_or(GatewayError::CassetteMiss {
            tag: request.tag.clone(),
            hash,
        })?;
        Ok(ProviderReply {
            text: line.reply.clone(),
            prompt_tokens: Some(line.prompt_tokens),
            completion_tokens: Some(line.completion_tokens),
            retries: 0,
        })
    }

    fn name(&self) -> &'static str {
        "replay"
    }
}

// ---------------------------------------------------------------------------
// Live provider (chat-completion HTTP API)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 1000,
        }
    }
}

/// Chat-completion HTTP client with bounded exponential backoff on
/// transient failures (timeouts, 429, 5xx).
pub struct LiveProvider {
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
    /// Seeded jitter source; affects pacing only, never outputs.
    jitter: Mutex<rand_chacha::ChaCha8Rng>,
}

impl LiveProvider {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        retry: RetryPolicy,
        seed: u64,
    ) -> Self {
        use rand::SeedableRng;
        LiveProvider {
            base_url: base_url.into(),
            api_key: api_key.into(),
            retry,
            jitter: Mutex::new(rand_chacha::ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        use rand::Rng;
        let base = self
            .retry
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(16));
        let jitter = self.jitter.lock().unwrap().random_range(0..=base / 2 + 1);
        Duration::from_millis(base + jitter)
    }

    fn call_once(&self, request: &ChatRequest) -> Result<ProviderReply, TransientOrFatal> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let result = ureq::post(&self.endpoint())
            .header("authorization", &format!("Bearer {}", self.api_key))
            .header("content-type", "application/json")
            .send(body.to_string());
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                return Err(TransientOrFatal::Transient(format!("http status {code}")));
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(TransientOrFatal::Fatal(format!("http status {code}")));
            }
            Err(e) => return Err(TransientOrFatal::Transient(e.to_string())),
        };
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransientOrFatal::Transient(e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| TransientOrFatal::Fatal(format!("malformed provider reply: {e}")))?;
        let reply_text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                TransientOrFatal::Fatal("reply lacks choices[0].message.content".into())
            })?
            .to_string();
        Ok(ProviderReply {
            text: reply_text,
            prompt_tokens: value["usage"]["prompt_tokens"].as_u64(),
            completion_tokens: value["usage"]["completion_tokens"].as_u64(),
            retries: 0,
        })
    }
}

enum TransientOrFatal {
    Transient(String),
    Fatal(String),
}

impl Provider for LiveProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let mut last_error = String::new();
        for attempt in 0..=self.retry.max_retries {
            match self.call_once(request) {
                Ok(mut reply) => {
                    reply.retries = attempt;
                    return Ok(reply);
                }
                Err(TransientOrFatal::Fatal(e)) => {
                    return Err(GatewayError::ProviderUnavailable {
                        attempts: attempt + 1,
                        last_error: e,
                    });
                }
                Err(TransientOrFatal::Transient(e)) => {
                    log::warn!("transient provider failure (attempt {}): {e}", attempt + 1);
                    last_error = e;
                    if attempt < self.retry.max_retries {
                        std::thread::sleep(self.backoff(attempt));
                    }
                }
            }
        }
        Err(GatewayError::ProviderUnavailable {
            attempts: self.retry.max_retries + 1,
            last_error,
        })
    }

    fn name(&self) -> &'static str {
        "live"
    }

    fn is_live(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

/// Counting semaphore bounding in-flight provider requests.
struct RequestLimiter {
    available: Mutex<usize>,
    cv: Condvar,
}

impl RequestLimiter {
    fn new(limit: usize) -> Self {
        RequestLimiter {
            available: Mutex::new(limit.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
    }

    fn release(&self) {
        *self.available.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

pub struct GatewayConfig {
    pub prices: PriceTable,
    /// Maximum concurrent provider calls.
    pub request_limit: usize,
    /// Reuse replies for identical prompts within the run.
    pub enable_prompt_cache: bool,
    /// Append every exchange to this cassette file.
    pub record_cassette: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            prices: PriceTable::default(),
            request_limit: 4,
            enable_prompt_cache: false,
            record_cassette: None,
        }
    }
}

/// Shareable across concurrent per-bug workers; ledger appends are
/// serialized.
/// Cached reply: text plus prompt/completion token counts.
type CachedReply = (String, u64, u64);

pub struct Gateway {
    provider: Box<dyn Provider>,
    prices: PriceTable,
    ledger: Mutex<Vec<ChatExchange>>,
    seen_tags: Mutex<std::collections::BTreeSet<String>>,
    cache: Option<Mutex<HashMap<String, CachedReply>>>,
    recorder: Option<Mutex<std::io::BufWriter<fs::File>>>,
    limiter: RequestLimiter,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>, config: GatewayConfig) -> Result<Self, GatewayError> {
        let recorder = match &config.record_cassette {
            Some(path) => {
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|source| GatewayError::Io {
                        path: parent.to_path_buf(),
                        source,
                    })?;
                }
                let file = fs::File::create(path).map_err(|source| GatewayError::Io {
                    path: path.clone(),
                    source,
                })?;
                Some(Mutex::new(std::io::BufWriter::new(file)))
            }
            None => None,
        };
        Ok(Gateway {
            provider,
            prices: config.prices,
            ledger: Mutex::new(Vec::new()),
            seen_tags: Mutex::new(Default::default()),
            cache: config
                .enable_prompt_cache
                .then(|| Mutex::new(HashMap::new())),
            recorder,
            limiter: RequestLimiter::new(config.request_limit),
        })
    }

    pub fn provider_name(&self) -> &'static str {
        self.provider.name()
    }

    pub fn is_live(&self) -> bool {
        self.provider.is_live()
    }

    /// Performs one completion: provider call (or cache hit), accounting,
    /// ledger append, optional cassette recording.
    pub fn complete(&self, request: ChatRequest) -> Result<ChatExchange, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::Config("request has no messages".into()));
        }
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0, 2]",
                request.temperature
            )));
        }
        if request.max_output_tokens == 0 {
            return Err(GatewayError::Config(
                "max_output_tokens must be positive".into(),
            ));
        }
        if !self.seen_tags.lock().unwrap().insert(request.tag.clone()) {
            log::warn!("request tag {:?} reused within this run", request.tag);
        }
        let hash = request.prompt_hash();

        if let Some(cache) = &self.cache {
            let hit = cache.lock().unwrap().get(&hash).cloned();
            if let Some((text, pt, ct)) = hit {
                let exchange = ChatExchange {
                    request,
                    reply_text: text,
                    prompt_tokens: pt,
                    completion_tokens: ct,
                    latency_micros: 0,
                    cost_micros: 0,
                    retries: 0,
                    cached: true,
                };
                self.ledger.lock().unwrap().push(exchange.clone());
                return Ok(exchange);
            }
        }

        self.limiter.acquire();
        let started = Instant::now();
        let reply = self.provider.complete(&request);
        let latency = started.elapsed();
        self.limiter.release();
        let reply = reply?;

        let prompt_tokens = reply
            .prompt_tokens
            .unwrap_or_else(|| estimate_tokens(&request.prompt_text()));
        let completion_tokens = reply
            .completion_tokens
            .unwrap_or_else(|| estimate_tokens(&reply.text));
        let latency_micros = if self.provider.is_live() {
            latency.as_micros() as u64
        } else {
            0
        };
        let exchange = ChatExchange {
            cost_micros: self
                .prices
                .cost_micros(&request.model, prompt_tokens, completion_tokens),
            request,
            reply_text: reply.text,
            prompt_tokens,
            completion_tokens,
            latency_micros,
            retries: reply.retries,
            cached: false,
        };

        if let Some(cache) = &self.cache {
            cache.lock().unwrap().insert(
                hash,
                (
                    exchange.reply_text.clone(),
                    exchange.prompt_tokens,
                    exchange.completion_tokens,
                ),
            );
        }
        if let Some(recorder) = &self.recorder {
            let line = CassetteLine {
                tag: exchange.request.tag.clone(),
                prompt_hash: exchange.request.prompt_hash(),
                reply: exchange.reply_text.clone(),
                prompt_tokens: exchange.prompt_tokens,
                completion_tokens: exchange.completion_tokens,
            };
            let mut w = recorder.lock().unwrap();
            serde_json::to_writer(&mut *w, &line).expect("cassette line serializes");
            let _ = w.write_all(b"\n");
            let _ = w.flush();
        }
        self.ledger.lock().unwrap().push(exchange.clone());
        Ok(exchange)
    }

    pub fn ledger(&self) -> Vec<ChatExchange> {
        self.ledger.lock().unwrap().clone()
    }

    pub fn ledger_len(&self) -> usize {
        self.ledger.lock().unwrap().len()
    }
}

// ---------------------------------------------------------------------------
// Cost reporting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLine {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_micros: u64,
    pub time_micros: u64,
}

impl CostLine {
    fn add(&mut self, e: &ChatExchange) {
        self.calls += 1;
        self.prompt_tokens += e.prompt_tokens;
        self.completion_tokens += e.completion_tokens;
        self.cost_micros += e.cost_micros;
        self.time_micros += e.latency_micros;
    }
}

/// Aggregated run accounting: per step, per bug, and in total. The total is
/// exactly the sum over exchanges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_step: std::collections::BTreeMap<String, CostLine>,
    pub per_bug: std::collections::BTreeMap<String, CostLine>,
    pub total: CostLine,
    pub bug_count: u64,
}

impl CostReport {
    pub fn mean_cost_per_bug_micros(&self) -> u64 {
        self.total
            .cost_micros
            .checked_div(self.bug_count)
            .unwrap_or(0)
    }

    pub fn mean_time_per_bug_micros(&self) -> u64 {
        self.total
            .time_micros
            .checked_div(self.bug_count)
            .unwrap_or(0)
    }
}

pub fn run_cost_report(ledger: &[ChatExchange]) -> CostReport {
    let mut report = CostReport::default();
    for e in ledger {
        report.total.add(e);
        report
            .per_step
            .entry(e.request.step.clone())
            .or_default()
            .add(e);
        if let Some(bug) = &e.request.bug_id {
            report.per_bug.entry(bug.clone()).or_default().add(e);
        }
    }
    report.bug_count = report.per_bug.len() as u64;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(tag: &str) -> ChatRequest {
        ChatRequest {
            model: "test-model".into(),
            messages: vec![Message::user("hello there, provider")],
            temperature: 0.0,
            max_output_tokens: 256,
            tag: tag.into(),
            step: "review".into(),
            bug_id: Some("bug-001".into()),
        }
    }

    fn gateway_with_script(entries: Vec<ScriptEntry>) -> Gateway {
        let config = GatewayConfig {
            prices: PriceTable::default().with_price("test-model", 1.0, 1.0),
            ..Default::default()
        };
        Gateway::new(Box::new(ScriptedProvider::new(entries)), config).unwrap()
    }

    #[test]
    fn scripted_reply_and_fake_token_costs() {
        let gw = gateway_with_script(vec![ScriptEntry {
            pattern: "review".into(),
            reply: "OK".into(),
            sticky: false,
            prompt_tokens: Some(1000),
            completion_tokens: Some(2000),
        }]);
        let ex = gw.complete(request("review:bug-001")).unwrap();
        assert_eq!(ex.reply_text, "OK");
        // $1/1M tokens on both sides: 3000 tokens -> 3000 micro-dollars.
        assert_eq!(ex.cost_micros, 3000);
        assert_eq!(ex.latency_micros, 0);
    }

    #[test]
    fn scripted_exhaustion_is_an_error() {
        let gw = gateway_with_script(vec![ScriptEntry::new("other", "x")]);
        let err = gw.complete(request("review:bug-001")).unwrap_err();
        assert!(matches!(err, GatewayError::ScriptExhausted { .. }));
    }

    #[test]
    fn sticky_entries_answer_repeatedly() {
        let gw = gateway_with_script(vec![ScriptEntry::new("*", "always").sticky()]);
        for i in 0..3 {
            let ex = gw
                .complete(request(&format!("review:bug-001:{i}")))
                .unwrap();
            assert_eq!(ex.reply_text, "always");
        }
    }

    #[test]
    fn byte_heuristic_token_estimate_when_counts_missing() {
        let gw = gateway_with_script(vec![ScriptEntry::new("*", "abcdefgh")]);
        let ex = gw.complete(request("review:x")).unwrap();
        assert_eq!(ex.completion_tokens, 2); // 8 bytes / 4
        assert_eq!(ex.prompt_tokens, estimate_tokens("hello there, provider"));
    }

    #[test]
    fn prompt_cache_preserves_reply_text_and_zeroes_cost() {
        let config = GatewayConfig {
            prices: PriceTable::default().with_price("test-model", 1.0, 1.0),
            enable_prompt_cache: true,
            ..Default::default()
        };
        let gw = Gateway::new(
            Box::new(ScriptedProvider::new(vec![ScriptEntry::new(
                "*",
                "cached reply",
            )])),
            config,
        )
        .unwrap();
        let first = gw.complete(request("review:a")).unwrap();
        let second = gw.complete(request("review:b")).unwrap(); // same prompt text
        assert_eq!(first.reply_text, second.reply_text);
        assert!(second.cached);
        assert_eq!(second.cost_micros, 0);
        assert_eq!(gw.ledger_len(), 2);
    }

    #[test]
    fn cassette_round_trip_through_recording_gateway() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        {
            let config = GatewayConfig {
                record_cassette: Some(path.clone()),
                ..Default::default()
            };
            let gw = Gateway::new(
                Box::new(ScriptedProvider::new(vec![ScriptEntry::new(
                    "*", "recorded",
                )])),
                config,
            )
            .unwrap();
            gw.complete(request("review:bug-001")).unwrap();
        }
        let replay = ReplayProvider::from_file(&path).unwrap();
        let gw = Gateway::new(Box::new(replay), GatewayConfig::default()).unwrap();
        let ex = gw.complete(request("review:bug-001")).unwrap();
        assert_eq!(ex.reply_text, "recorded");

        // A different prompt misses.
        let mut other = request("review:bug-001");
        other.messages[0].content = "different".into();
        let err = gw.complete(other).unwrap_err();
        assert!(matches!(err, GatewayError::CassetteMiss { .. }));
    }

    #[test]
    fn cost_report_is_exactly_additive() {
        let gw = gateway_with_script(vec![
            ScriptEntry {
                pattern: "review".into(),
                reply: "a".into(),
                sticky: false,
                prompt_tokens: Some(500),
                completion_tokens: Some(500),
            },
            ScriptEntry {
                pattern: "confirm".into(),
                reply: "b".into(),
                sticky: false,
                prompt_tokens: Some(1500),
                completion_tokens: Some(500),
            },
        ]);
        gw.complete(request("review:bug-001")).unwrap();
        let mut r2 = request("confirm:bug-002");
        r2.step = "confirm".into();
        r2.bug_id = Some("bug-002".into());
        gw.complete(r2).unwrap();

        let ledger = gw.ledger();
        let report = run_cost_report(&ledger);
        // $0.001 + $0.002 = $0.003 exactly.
        assert_eq!(report.total.cost_micros, 3000);
        assert_eq!(
            report.total.cost_micros,
            ledger.iter().map(|e| e.cost_micros).sum::<u64>()
        );
        assert_eq!(report.per_step["review"].cost_micros, 1000);
        assert_eq!(report.per_step["confirm"].cost_micros, 2000);
        assert_eq!(report.per_bug.len(), 2);
        assert_eq!(report.mean_cost_per_bug_micros(), 1500);
    }

    #[test]
    fn invalid_requests_are_rejected_up_front() {
        let gw = gateway_with_script(vec![ScriptEntry::new("*", "x").sticky()]);
        let mut bad = request("t1");
        bad.temperature = 3.0;
        assert!(matches!(
            gw.complete(bad).unwrap_err(),
            GatewayError::Config(_)
        ));
        let mut bad = request("t2");
        bad.messages.clear();
        assert!(matches!(
            gw.complete(bad).unwrap_err(),
            GatewayError::Config(_)
        ));
        let mut bad = request("t3");
        bad.max_output_tokens = 0;
        assert!(matches!(
            gw.complete(bad).unwrap_err(),
            GatewayError::Config(_)
        ));
    }

    #[test]
    fn price_table_rounds_to_nearest_micro() {
        let pt = PriceTable::default().with_price("m", 0.15, 0.60);
        // 10 tokens at $0.15/1M = 1.5 micro -> rounds to 2.
        assert_eq!(pt.cost_micros("m", 10, 0), 2);
        assert_eq!(pt.cost_micros("m", 1_000_000, 1_000_000), 150_000 + 600_000);
        assert_eq!(pt.cost_micros("unknown", 100, 100), 0);
    }
}
