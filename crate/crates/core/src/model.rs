//! Shared domain types and the canonical method identifier scheme.
//!
//! A method is identified by `(class, method, declaration line)` and rendered
//! as `className@methodName@lineNumber`. Overloads are disambiguated by line
//! number alone, so every other module works in terms of [`MethodRef`].
//!
//! All values here are immutable after construction and safe to share across
//! concurrent pipeline workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors produced while parsing or resolving method references.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum RefError {
    #[error("malformed method ref {input:?}: {reason}")]
    Malformed { input: String, reason: String },
    #[error("method ref {0} not found in snapshot")]
    NotFound(String),
    #[error(
        "method ref {0} is ambiguous: {1} candidates share the name (enable fuzzy resolution)"
    )]
    Ambiguous(String, usize),
}

/// Canonical identifier of a method: `class@method@declLine`.
///
/// `class_name` and `method_name` are non-empty and never contain `@`;
/// `decl_line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodRef {
    class_name: String,
    method_name: String,
    decl_line: u32,
}

impl MethodRef {
    pub fn new(
        class_name: impl Into<String>,
        method_name: impl Into<String>,
        decl_line: u32,
    ) -> Result<Self, RefError> {
        let class_name = class_name.into();
        let method_name = method_name.into();
        let fail = |reason: &str| RefError::Malformed {
            input: format!("{class_name}@{method_name}@{decl_line}"),
            reason: reason.to_string(),
        };
        if class_name.is_empty() || method_name.is_empty() {
            return Err(fail("empty class or method name"));
        }
        if class_name.contains('@') || method_name.contains('@') {
            return Err(fail("name contains '@'"));
        }
        if decl_line == 0 {
            return Err(fail("line must be >= 1"));
        }
        Ok(Self {
            class_name,
            method_name,
            decl_line,
        })
    }

    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn method_name(&self) -> &str {
        &self.method_name
    }

    pub fn decl_line(&self) -> u32 {
        self.decl_line
    }

    /// Same class and method name, ignoring the declaration line.
    pub fn same_name(&self, other: &MethodRef) -> bool {
        self.class_name == other.class_name && self.method_name == other.method_name
    }
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}@{}",
            self.class_name, self.method_name, self.decl_line
        )
    }
}

impl FromStr for MethodRef {
    type Err = RefError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_method_ref(s)
    }
}

/// Parses `className@methodName@lineNumber` into a [`MethodRef`].
pub fn parse_method_ref(text: &str) -> Result<MethodRef, RefError> {
    let parts: Vec<&str> = text.split('@').collect();
    if parts.len() != 3 {
        return Err(RefError::Malformed {
            input: text.to_string(),
            reason: format!("expected 3 '@'-separated parts, got {}", parts.len()),
        });
    }
    let line: u32 = parts[2].parse().map_err(|_| RefError::Malformed {
        input: text.to_string(),
        reason: format!("line {:?} is not a positive integer", parts[2]),
    })?;
    MethodRef::new(parts[0], parts[1], line)
}

/// `method@line` pair scoped to a known class, as emitted by the method
/// condensation step.
pub fn parse_method_at_line(class_name: &str, token: &str) -> Result<MethodRef, RefError> {
    let parts: Vec<&str> = token.split('@').collect();
    if parts.len() != 2 {
        return Err(RefError::Malformed {
            input: token.to_string(),
            reason: format!("expected 'method@line', got {} parts", parts.len()),
        });
    }
    let line: u32 = parts[1].parse().map_err(|_| RefError::Malformed {
        input: token.to_string(),
        reason: format!("line {:?} is not a positive integer", parts[1]),
    })?;
    MethodRef::new(class_name, parts[0], line)
}

impl Serialize for MethodRef {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MethodRef {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_method_ref(&s).map_err(serde::de::Error::custom)
    }
}

/// Inclusive 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: u32,
    pub end: u32,
}

impl LineSpan {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, line: u32) -> bool {
        self.start <= line && line <= self.end
    }

    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &LineSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// One indexed method: identity plus source location and text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method_ref: MethodRef,
    /// Path relative to the project root.
    pub file: String,
    pub body_span: LineSpan,
    /// Exactly `body_span.len()` lines of source.
    pub body_text: String,
    pub doc_text: Option<String>,
}

impl MethodRecord {
    /// Declaration header up to the opening brace, used when a method is
    /// too large to inline.
    pub fn signature(&self) -> &str {
        let first = self.body_text.lines().next().unwrap_or("");
        match first.find('{') {
            Some(brace) => first[..=brace].trim_end(),
            None => first.trim_end(),
        }
    }
}

/// One indexed class with its methods ordered by declaration line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub name: String,
    pub file: String,
    pub methods: Vec<MethodRecord>,
    /// Full text of the containing file; line numbers in method spans are
    /// 1-based offsets into this text.
    pub source_text: String,
}

impl ClassRecord {
    pub fn method_count(&self) -> usize {
        self.methods.len()
    }

    pub fn find_method(&self, method_ref: &MethodRef) -> Option<&MethodRecord> {
        self.methods.iter().find(|m| m.method_ref == *method_ref)
    }

    /// Content hash of the class source, used to cache summaries.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.source_text.as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Immutable, indexed view of a project's source tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectSnapshot {
    pub project_name: String,
    /// Sorted by class name.
    pub classes: Vec<ClassRecord>,
    /// Content hash over every indexed source byte.
    pub index_fingerprint: String,
}

impl ProjectSnapshot {
    pub fn class(&self, name: &str) -> Option<&ClassRecord> {
        self.classes
            .binary_search_by(|c| c.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.classes[i])
    }

    pub fn method_count(&self) -> usize {
        self.classes.iter().map(|c| c.methods.len()).sum()
    }

    pub fn all_methods(&self) -> impl Iterator<Item = &MethodRecord> {
        self.classes.iter().flat_map(|c| c.methods.iter())
    }

    /// Resolves a reference against the snapshot.
    ///
    /// Exact `(class, method, line)` matches always win. With `fuzzy` a
    /// same-named method is accepted: the unique one if there is only one,
    /// otherwise the one with the nearest declaration line (ties go to the
    /// smaller line). Without `fuzzy`, a missed line is `NotFound`, or
    /// `Ambiguous` when several same-named methods would have to be
    /// disambiguated.
    pub fn resolve(&self, method_ref: &MethodRef, fuzzy: bool) -> Result<&MethodRecord, RefError> {
        let class = self
            .class(method_ref.class_name())
            .ok_or_else(|| RefError::NotFound(method_ref.to_string()))?;
        if let Some(exact) = class.find_method(method_ref) {
            return Ok(exact);
        }
        let candidates: Vec<&MethodRecord> = class
            .methods
            .iter()
            .filter(|m| m.method_ref.method_name() == method_ref.method_name())
            .collect();
        match (candidates.len(), fuzzy) {
            (0, _) => Err(RefError::NotFound(method_ref.to_string())),
            (1, true) => Ok(candidates[0]),
            (_, false) if candidates.len() > 1 => Err(RefError::Ambiguous(
                method_ref.to_string(),
                candidates.len(),
            )),
            (_, false) => Err(RefError::NotFound(method_ref.to_string())),
            (_, true) => {
                let target = method_ref.decl_line() as i64;
                Ok(candidates
                    .into_iter()
                    .min_by_key(|m| {
                        let line = m.method_ref.decl_line() as i64;
                        ((line - target).abs(), line)
                    })
                    .expect("non-empty candidate set"))
            }
        }
    }
}

/// Convenience wrapper matching the operation-style call sites.
pub fn resolve_ref<'a>(
    snapshot: &'a ProjectSnapshot,
    method_ref: &MethodRef,
    fuzzy: bool,
) -> Result<&'a MethodRecord, RefError> {
    snapshot.resolve(method_ref, fuzzy)
}

/// Outcome and method coverage of a single test execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestExecution {
    pub name: String,
    pub passed: bool,
    pub covered: BTreeSet<MethodRef>,
}

/// Per-test pass/fail outcomes plus the method coverage flags derived from
/// the failing run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageProfile {
    pub tests: Vec<TestExecution>,
}

impl CoverageProfile {
    pub fn failing_tests(&self) -> impl Iterator<Item = &TestExecution> {
        self.tests.iter().filter(|t| !t.passed)
    }

    pub fn passing_tests(&self) -> impl Iterator<Item = &TestExecution> {
        self.tests.iter().filter(|t| t.passed)
    }

    /// Methods covered by at least one failing test: the indicator used by
    /// the class coverage rate.
    pub fn failing_covered(&self) -> BTreeSet<&MethodRef> {
        self.failing_tests()
            .flat_map(|t| t.covered.iter())
            .collect()
    }

    pub fn covers_in_failing_run(&self, method_ref: &MethodRef) -> bool {
        self.failing_tests().any(|t| t.covered.contains(method_ref))
    }
}

/// One frame of a failure stack trace. Frames whose class is not part of the
/// snapshot (runtime or third-party code) are kept but flagged external.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    pub class_name: String,
    pub method_name: String,
    pub line: u32,
    #[serde(default)]
    pub external: bool,
}

impl fmt::Display for StackFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "at {}.{}(line {}){}",
            self.class_name,
            self.method_name,
            self.line,
            if self.external { " [external]" } else { "" }
        )
    }
}

/// A failing test with its source and the transitively called helper test
/// methods, in discovery order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailingTest {
    pub name: String,
    pub source: String,
    /// `(name, source)` of helper test methods referenced from this test.
    pub helpers: Vec<(String, String)>,
}

/// Everything known about one failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugCase {
    pub bug_id: String,
    pub error_message: String,
    pub stack_trace: Vec<StackFrame>,
    /// Sorted by test name; the first entry is the one included in prompts.
    pub failing_tests: Vec<FailingTest>,
    pub coverage: CoverageProfile,
    /// Evaluation-only ground truth; non-empty for evaluation and memgen use.
    pub ground_truth: BTreeSet<MethodRef>,
    /// Fixed method bodies, present only for bugs usable as memgen training
    /// references.
    #[serde(default)]
    pub patched_bodies: BTreeMap<MethodRef, String>,
}

impl BugCase {
    /// The single failing test included in prompts: lexicographically
    /// smallest name when several failed.
    pub fn selected_failing_test(&self) -> Option<&FailingTest> {
        self.failing_tests.first()
    }

    pub fn has_patches(&self) -> bool {
        !self.patched_bodies.is_empty()
    }

    /// Classes containing at least one ground-truth method.
    pub fn ground_truth_classes(&self) -> BTreeSet<&str> {
        self.ground_truth.iter().map(|r| r.class_name()).collect()
    }
}

/// The five pipeline steps that carry their own dynamic-memory slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStep {
    Review,
    Condense1,
    Condense2,
    Condense3,
    Confirm,
}

impl PipelineStep {
    pub const ALL: [PipelineStep; 5] = [
        PipelineStep::Review,
        PipelineStep::Condense1,
        PipelineStep::Condense2,
        PipelineStep::Condense3,
        PipelineStep::Confirm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PipelineStep::Review => "review",
            PipelineStep::Condense1 => "condense1",
            PipelineStep::Condense2 => "condense2",
            PipelineStep::Condense3 => "condense3",
            PipelineStep::Confirm => "confirm",
        }
    }
}

impl fmt::Display for PipelineStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineStep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "review" => Ok(PipelineStep::Review),
            "condense1" => Ok(PipelineStep::Condense1),
            "condense2" => Ok(PipelineStep::Condense2),
            "condense3" => Ok(PipelineStep::Condense3),
            "confirm" => Ok(PipelineStep::Confirm),
            other => Err(format!("unknown pipeline step {other:?}")),
        }
    }
}

/// Pre-generated project knowledge: one project summary plus one summary per
/// class, with content hashes for cache invalidation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticMemory {
    pub project_summary: String,
    pub class_summaries: BTreeMap<String, String>,
    /// Class content hashes at summary generation time.
    #[serde(default)]
    pub class_hashes: BTreeMap<String, String>,
}

/// Per-step debugging guidance. Every step always has a slot; empty text
/// means "no guidance yet".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicMemory {
    pub review: String,
    pub condense1: String,
    pub condense2: String,
    pub condense3: String,
    pub confirm: String,
}

impl DynamicMemory {
    pub fn get(&self, step: PipelineStep) -> &str {
        match step {
            PipelineStep::Review => &self.review,
            PipelineStep::Condense1 => &self.condense1,
            PipelineStep::Condense2 => &self.condense2,
            PipelineStep::Condense3 => &self.condense3,
            PipelineStep::Confirm => &self.confirm,
        }
    }

    pub fn set(&mut self, step: PipelineStep, guidance: String) {
        match step {
            PipelineStep::Review => self.review = guidance,
            PipelineStep::Condense1 => self.condense1 = guidance,
            PipelineStep::Condense2 => self.condense2 = guidance,
            PipelineStep::Condense3 => self.condense3 = guidance,
            PipelineStep::Confirm => self.confirm = guidance,
        }
    }

    pub fn is_empty(&self) -> bool {
        PipelineStep::ALL.iter().all(|s| self.get(*s).is_empty())
    }
}

/// One accepted dynamic-memory refinement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementEvent {
    pub step: PipelineStep,
    pub bug_id: String,
    pub iteration: u32,
}

/// The versioned two-part external memory injected into every prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalMemory {
    #[serde(rename = "static")]
    pub static_part: StaticMemory,
    #[serde(rename = "dynamic")]
    pub dynamic_part: DynamicMemory,
    pub version: u64,
    pub provenance: Vec<RefinementEvent>,
    /// Fingerprint of the snapshot the static part was generated from; empty
    /// until a summary run fills it.
    #[serde(default)]
    pub snapshot_fingerprint: String,
}

impl ExternalMemory {
    /// Content hash over the whole logical state; refinement fixed points
    /// leave it unchanged.
    pub fn fingerprint(&self) -> String {
        let doc = serde_json::to_vec(self).expect("memory serializes");
        let mut hasher = Sha256::new();
        hasher.update(&doc);
        hex::encode(hasher.finalize())
    }

    /// Copy with the dynamic part emptied, keeping version and provenance
    /// history intact.
    pub fn with_blank_dynamic(&self) -> ExternalMemory {
        ExternalMemory {
            dynamic_part: DynamicMemory::default(),
            ..self.clone()
        }
    }
}

/// Aggregate provider usage for one localization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Telemetry {
    pub calls: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Integer micro-dollars; exact additivity over exchanges.
    pub cost_micros: u64,
    /// Sum of per-exchange latencies, in microseconds.
    pub time_micros: u64,
}

impl Telemetry {
    pub fn add_exchange(
        &mut self,
        prompt_tokens: u64,
        completion_tokens: u64,
        cost_micros: u64,
        time_micros: u64,
    ) {
        self.calls += 1;
        self.prompt_tokens += prompt_tokens;
        self.completion_tokens += completion_tokens;
        self.cost_micros += cost_micros;
        self.time_micros += time_micros;
    }

    pub fn cost_dollars(&self) -> f64 {
        self.cost_micros as f64 / 1e6
    }

    pub fn time_seconds(&self) -> f64 {
        self.time_micros as f64 / 1e6
    }
}

/// Per-step artifacts preserved alongside the final ranking.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intermediates {
    pub bug_review: String,
    pub prefiltered_classes: Vec<String>,
    pub kept_classes_1: Vec<String>,
    pub kept_classes_2: Vec<String>,
    pub kept_methods: Vec<MethodRef>,
}

/// Final output for one bug: ordered suspects plus intermediates and
/// telemetry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedSuspects {
    pub bug_id: String,
    /// No duplicates; every entry resolves in the snapshot.
    pub ranking: Vec<MethodRef>,
    pub intermediates: Intermediates,
    pub telemetry: Telemetry,
    /// Stages that fell back to a documented non-LLM path; empty means clean.
    #[serde(default)]
    pub degraded: Vec<String>,
}

impl RankedSuspects {
    pub fn is_degraded(&self) -> bool {
        !self.degraded.is_empty()
    }
}
