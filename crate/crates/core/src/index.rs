//! Builds a [`ProjectSnapshot`] and [`BugCase`]s from disk.
//!
//! Two ingestion modes:
//!
//! - **manifest** — a `manifest.json` at the project root declares classes,
//!   method spans, test sources, and bug entries. This is the contract for
//!   fixtures and for real benchmarks pre-processed by external scripts.
//! - **builtin** — a lightweight indexer for Java-like, brace-delimited
//!   source. It handles nested braces, comments, and string literals;
//!   annotations-with-bodies and exotic generics are out of scope.
//!
//! Indexing is pure: identical bytes produce identical snapshot
//! fingerprints.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    BugCase, ClassRecord, CoverageProfile, FailingTest, LineSpan, MethodRecord, MethodRef,
    ProjectSnapshot, StackFrame, TestExecution,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Maximum depth of the helper-test closure (direct helpers are depth 1).
pub const HELPER_CLOSURE_DEPTH: u32 = 3;

/// Brace-recovery attempts tolerated per file in builtin mode.
const RECOVERY_LIMIT: u32 = 3;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest at {field}: {reason}")]
    ManifestInvalid { field: String, reason: String },
    #[error("unbalanced braces in {file} near line {line} (beyond recovery limit)")]
    Unbalanced { file: String, line: u32 },
    #[error("duplicate class name {0}")]
    DuplicateClass(String),
    #[error("no source files under {0} matched the configured extensions")]
    NoSources(PathBuf),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> IndexError {
    IndexError::ManifestInvalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// How to build the snapshot.
#[derive(Debug, Clone)]
pub enum IndexMode {
    /// Read `manifest.json` at the project root.
    Manifest,
    /// Scan source files with the given extensions (no leading dot).
    Builtin { extensions: Vec<String> },
}

impl IndexMode {
    pub fn builtin_default() -> Self {
        IndexMode::Builtin {
            extensions: vec!["java".to_string()],
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest schema (documented in docs/manifest-schema.md)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub project_name: String,
    pub classes: Vec<ManifestClass>,
    #[serde(default)]
    pub test_methods: Vec<ManifestTestMethod>,
    #[serde(default)]
    pub bugs: Vec<ManifestBug>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestClass {
    pub name: String,
    /// Path relative to the project root.
    pub file: String,
    pub methods: Vec<ManifestMethod>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestMethod {
    pub name: String,
    pub decl_line: u32,
    /// Inclusive `[start, end]` line span of the body.
    pub span: (u32, u32),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTestMethod {
    pub name: String,
    pub source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestBug {
    pub id: String,
    pub error_message: String,
    #[serde(default)]
    pub stack_trace: Vec<ManifestFrame>,
    /// Names of the failed test methods; sources come from the test pool.
    pub failing_tests: Vec<String>,
    /// Per-test outcome and covered methods.
    pub tests: Vec<ManifestTestExecution>,
    #[serde(default)]
    pub ground_truth: Vec<String>,
    #[serde(default)]
    pub patched_bodies: BTreeMap<String, String>,
    /// Bug-local test sources; override the project-level pool by name.
    #[serde(default)]
    pub test_methods: Vec<ManifestTestMethod>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub class: String,
    pub method: String,
    pub line: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTestExecution {
    pub name: String,
    pub passed: bool,
    #[serde(default)]
    pub covered: Vec<String>,
}

// ---------------------------------------------------------------------------
// Snapshot construction
// ---------------------------------------------------------------------------

/// Builds a deterministic snapshot: classes sorted by name, methods by
/// declaration line, fingerprint over every indexed source byte.
pub fn index_tree(root: &Path, mode: &IndexMode) -> Result<ProjectSnapshot, IndexError> {
    match mode {
        IndexMode::Manifest => index_from_manifest(root),
        IndexMode::Builtin { extensions } => index_builtin(root, extensions),
    }
}

fn read_file(path: &Path) -> Result<String, IndexError> {
    fs::read_to_string(path).map_err(|source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_manifest(root: &Path) -> Result<ProjectManifest, IndexError> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(invalid(
            MANIFEST_FILE,
            format!("not found under {}", root.display()),
        ));
    }
    let text = read_file(&path)?;
    serde_json::from_str(&text).map_err(|e| invalid(MANIFEST_FILE, e.to_string()))
}

fn fingerprint_files(files: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (path, content) in files {
        hasher.update(path.as_bytes());
        hasher.update([0]);
        hasher.update(content.as_bytes());
        hasher.update([0]);
    }
    hex::encode(hasher.finalize())
}

fn slice_lines(content: &str, span: LineSpan) -> Option<String> {
    let lines: Vec<&str> = content.lines().collect();
    if span.start == 0 || span.end as usize > lines.len() || span.start > span.end {
        return None;
    }
    Some(lines[span.start as usize - 1..span.end as usize].join("\n"))
}

fn index_from_manifest(root: &Path) -> Result<ProjectSnapshot, IndexError> {
    let manifest = load_manifest(root)?;
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    let mut classes: Vec<ClassRecord> = Vec::new();
    let mut seen_classes: BTreeSet<String> = BTreeSet::new();

    for (ci, mc) in manifest.classes.iter().enumerate() {
        let field = format!("classes[{ci}]");
        if mc.name.is_empty() || mc.name.contains('@') {
            return Err(invalid(format!("{field}.name"), "empty or contains '@'"));
        }
        if !seen_classes.insert(mc.name.clone()) {
            return Err(IndexError::DuplicateClass(mc.name.clone()));
        }
        if !files.contains_key(&mc.file) {
            let content = read_file(&root.join(&mc.file))?;
            files.insert(mc.file.clone(), content);
        }
        let content = files[&mc.file].clone();

        let mut methods = Vec::new();
        for (mi, mm) in mc.methods.iter().enumerate() {
            let mfield = format!("{field}.methods[{mi}]");
            let span = LineSpan::new(mm.span.0, mm.span.1);
            if !span.contains(mm.decl_line) {
                return Err(invalid(
                    format!("{mfield}.span"),
                    format!(
                        "span {:?} does not contain decl_line {}",
                        mm.span, mm.decl_line
                    ),
                ));
            }
            let body_text = slice_lines(&content, span).ok_or_else(|| {
                invalid(
                    format!("{mfield}.span"),
                    format!("span {:?} out of bounds for {}", mm.span, mc.file),
                )
            })?;
            let method_ref = MethodRef::new(&mc.name, &mm.name, mm.decl_line)
                .map_err(|e| invalid(format!("{mfield}.name"), e.to_string()))?;
            methods.push(MethodRecord {
                method_ref,
                file: mc.file.clone(),
                body_span: span,
                body_text,
                doc_text: mm.doc.clone(),
            });
        }
        if methods.is_empty() {
            return Err(invalid(
                format!("{field}.methods"),
                "class declares no methods",
            ));
        }
        methods.sort_by_key(|m| m.method_ref.decl_line());
        let mut last: Option<(String, u32)> = None;
        for m in &methods {
            let key = (
                m.method_ref.method_name().to_string(),
                m.method_ref.decl_line(),
            );
            if last.as_ref() == Some(&key) {
                return Err(invalid(
                    format!("{field}.methods"),
                    format!("duplicate method {}@{}", key.0, key.1),
                ));
            }
            last = Some(key);
        }
        classes.push(ClassRecord {
            name: mc.name.clone(),
            file: mc.file.clone(),
            methods,
            source_text: content,
        });
    }

    // Method spans within one file must not overlap.
    let mut by_file: BTreeMap<&str, Vec<(&str, LineSpan)>> = BTreeMap::new();
    for c in &classes {
        for m in &c.methods {
            by_file
                .entry(m.file.as_str())
                .or_default()
                .push((c.name.as_str(), m.body_span));
        }
    }
    for (file, mut spans) in by_file {
        spans.sort_by_key(|(_, s)| s.start);
        for w in spans.windows(2) {
            if w[0].1.overlaps(&w[1].1) {
                return Err(invalid(
                    format!("classes (file {file})"),
                    format!("overlapping method spans {:?} and {:?}", w[0].1, w[1].1),
                ));
            }
        }
    }

    classes.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(ProjectSnapshot {
        project_name: manifest.project_name,
        index_fingerprint: fingerprint_files(&files),
        classes,
    })
}

// ---------------------------------------------------------------------------
// Builtin indexer
// ---------------------------------------------------------------------------

fn index_builtin(root: &Path, extensions: &[String]) -> Result<ProjectSnapshot, IndexError> {
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !e.file_name().to_string_lossy().starts_with('.'))
    {
        let entry = entry.map_err(|e| IndexError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("");
        if !extensions.iter().any(|want| want == ext) {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        files.insert(rel, read_file(entry.path())?);
    }
    if files.is_empty() {
        return Err(IndexError::NoSources(root.to_path_buf()));
    }

    let mut classes: Vec<ClassRecord> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (rel, content) in &files {
        for parsed in scan_source(rel, content)? {
            if !seen.insert(parsed.name.clone()) {
                return Err(IndexError::DuplicateClass(parsed.name.clone()));
            }
            let mut methods = Vec::new();
            for m in parsed.methods {
                let span = LineSpan::new(m.start_line, m.end_line);
                methods.push(MethodRecord {
                    method_ref: MethodRef::new(&parsed.name, &m.name, m.decl_line)
                        .map_err(|e| invalid(rel.clone(), e.to_string()))?,
                    file: rel.clone(),
                    body_span: span,
                    body_text: slice_lines(content, span).unwrap_or_default(),
                    doc_text: m.doc,
                });
            }
            if methods.is_empty() {
                log::warn!(
                    "builtin indexer: class {} in {} has no methods, skipped",
                    parsed.name,
                    rel
                );
                continue;
            }
            methods.sort_by_key(|m| m.method_ref.decl_line());
            classes.push(ClassRecord {
                name: parsed.name,
                file: rel.clone(),
                methods,
                source_text: content.clone(),
            });
        }
    }

    let project_name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "project".to_string());
    classes.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(ProjectSnapshot {
        project_name,
        index_fingerprint: fingerprint_files(&files),
        classes,
    })
}

struct ParsedClass {
    name: String,
    methods: Vec<ParsedMethod>,
}

struct ParsedMethod {
    name: String,
    decl_line: u32,
    start_line: u32,
    end_line: u32,
    doc: Option<String>,
}

/// Replaces comment and string/char literal contents with spaces, keeping
/// newlines so line numbers survive. Returns the blanked text plus every
/// doc-comment block as `(end_line, text)`.
fn blank_noise(source: &str) -> (String, Vec<(u32, String)>) {
    #[derive(PartialEq)]
    enum St {
        Code,
        Line,
        Block { doc: bool },
        Str,
        Chr,
    }
    let mut out = String::with_capacity(source.len());
    let mut docs = Vec::new();
    let mut doc_buf = String::new();
    let mut st = St::Code;
    let mut line: u32 = 1;
    let mut chars = source.chars().peekable();
    while let Some(c) = chars.next() {
        let nl = c == '\n';
        match st {
            St::Code => match c {
                '/' if chars.peek() == Some(&'/') => {
                    chars.next();
                    out.push_str("  ");
                    st = St::Line;
                }
                '/' if chars.peek() == Some(&'*') => {
                    chars.next();
                    let doc = chars.peek() == Some(&'*');
                    out.push_str("  ");
                    doc_buf.clear();
                    st = St::Block { doc };
                }
                '"' => {
                    out.push('"');
                    st = St::Str;
                }
                '\'' => {
                    out.push('\'');
                    st = St::Chr;
                }
                _ => out.push(c),
            },
            St::Line => {
                if nl {
                    out.push('\n');
                    st = St::Code;
                } else {
                    out.push(' ');
                }
            }
            St::Block { doc } => {
                if c == '*' && chars.peek() == Some(&'/') {
                    chars.next();
                    out.push_str("  ");
                    if doc {
                        docs.push((line, clean_doc(&doc_buf)));
                    }
                    st = St::Code;
                } else {
                    if doc {
                        doc_buf.push(c);
                    }
                    out.push(if nl { '\n' } else { ' ' });
                }
            }
            St::Str => match c {
                '\\' => {
                    out.push_str("  ");
                    chars.next();
                }
                '"' => {
                    out.push('"');
                    st = St::Code;
                }
                _ => out.push(if nl { '\n' } else { ' ' }),
            },
            St::Chr => match c {
                '\\' => {
                    out.push_str("  ");
                    chars.next();
                }
                '\'' => {
                    out.push('\'');
                    st = St::Code;
                }
                _ => out.push(if nl { '\n' } else { ' ' }),
            },
        }
        if nl {
            line += 1;
        }
    }
    (out, docs)
}

fn clean_doc(raw: &str) -> String {
    raw.lines()
        .map(|l| l.trim().trim_start_matches('*').trim())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

const CONTROL_KEYWORDS: &[&str] = &[
    "if",
    "for",
    "while",
    "switch",
    "catch",
    "return",
    "new",
    "else",
    "do",
    "try",
    "synchronized",
];

fn scan_source(file: &str, content: &str) -> Result<Vec<ParsedClass>, IndexError> {
    let (blanked, docs) = blank_noise(content);
    let class_re = Regex::new(r"\b(?:class|interface|enum)\s+([A-Za-z_][A-Za-z0-9_]*)").unwrap();
    let name_re = Regex::new(r"([A-Za-z_][A-Za-z0-9_$]*)\s*\(").unwrap();

    enum Block {
        Class {
            index: usize,
        },
        Method {
            class_index: usize,
            method: ParsedMethod,
        },
        Other,
    }

    let mut classes: Vec<ParsedClass> = Vec::new();
    let mut stack: Vec<Block> = Vec::new();
    // Header: declaration text accumulated since the last `{`, `}`, or `;`.
    let mut header: Vec<(char, u32)> = Vec::new();
    let mut recoveries = 0u32;
    let mut line: u32 = 1;

    for c in blanked.chars() {
        match c {
            '{' => {
                let text: String = header.iter().map(|(ch, _)| *ch).collect();
                let block = if let Some(cap) = class_re.captures(&text) {
                    classes.push(ParsedClass {
                        name: cap[1].to_string(),
                        methods: Vec::new(),
                    });
                    Block::Class {
                        index: classes.len() - 1,
                    }
                } else if let Some(Block::Class { index }) = stack.last() {
                    match method_header(&text, &header, &name_re) {
                        Some((name, decl_line, header_start)) => Block::Method {
                            class_index: *index,
                            method: ParsedMethod {
                                name,
                                decl_line,
                                start_line: header_start.min(decl_line),
                                end_line: 0,
                                doc: docs
                                    .iter()
                                    .rev()
                                    .find(|(end, _)| {
                                        *end + 1 == header_start || *end + 2 == header_start
                                    })
                                    .map(|(_, d)| d.clone()),
                            },
                        },
                        None => Block::Other,
                    }
                } else {
                    Block::Other
                };
                stack.push(block);
                header.clear();
            }
            '}' => {
                match stack.pop() {
                    Some(Block::Method {
                        class_index,
                        mut method,
                    }) => {
                        method.end_line = line;
                        classes[class_index].methods.push(method);
                    }
                    Some(_) => {}
                    None => {
                        recoveries += 1;
                        if recoveries > RECOVERY_LIMIT {
                            return Err(IndexError::Unbalanced {
                                file: file.to_string(),
                                line,
                            });
                        }
                    }
                }
                header.clear();
            }
            ';' => header.clear(),
            _ => header.push((c, line)),
        }
        if c == '\n' {
            line += 1;
        }
    }
    if !stack.is_empty() {
        return Err(IndexError::Unbalanced {
            file: file.to_string(),
            line,
        });
    }
    Ok(classes)
}

/// Extracts `(method name, decl line, header start line)` from a block
/// header, or `None` when the block is not a method body.
fn method_header(
    text: &str,
    header: &[(char, u32)],
    name_re: &Regex,
) -> Option<(String, u32, u32)> {
    let cap = name_re.captures(text)?;
    let name = cap.get(1).unwrap();
    if CONTROL_KEYWORDS.contains(&name.as_str()) {
        return None;
    }
    // `)` must close before the header ends, ruling out lambda-style blocks.
    if !text[name.end()..].contains(')') {
        return None;
    }
    let decl_line = header[name.start()].1;
    let header_start = header
        .iter()
        .find(|(ch, _)| !ch.is_whitespace())
        .map(|(_, l)| *l)
        .unwrap_or(decl_line);
    Some((name.as_str().to_string(), decl_line, header_start))
}

// ---------------------------------------------------------------------------
// Bug case loading
// ---------------------------------------------------------------------------

/// Loads one [`BugCase`] per manifest bug entry.
///
/// Coverage flags naming methods outside the snapshot are reported and
/// dropped; the case itself is kept. Bugs with zero failing tests are
/// rejected.
pub fn load_bug_cases(snapshot: &ProjectSnapshot, root: &Path) -> Result<Vec<BugCase>, IndexError> {
    let manifest = load_manifest(root)?;
    let project_pool: BTreeMap<String, String> = manifest
        .test_methods
        .iter()
        .map(|t| (t.name.clone(), t.source.clone()))
        .collect();

    let mut cases = Vec::new();
    for (bi, raw) in manifest.bugs.iter().enumerate() {
        let field = format!("bugs[{bi}]");
        if raw.failing_tests.is_empty() {
            return Err(invalid(
                format!("{field}.failing_tests"),
                "bug has zero failing tests",
            ));
        }
        let mut pool = project_pool.clone();
        for t in &raw.test_methods {
            pool.insert(t.name.clone(), t.source.clone());
        }

        let mut tests = Vec::new();
        for (ti, t) in raw.tests.iter().enumerate() {
            let mut covered = BTreeSet::new();
            for reftext in &t.covered {
                let parsed = crate::model::parse_method_ref(reftext)
                    .map_err(|e| invalid(format!("{field}.tests[{ti}].covered"), e.to_string()))?;
                match snapshot.resolve(&parsed, true) {
                    Ok(record) => {
                        covered.insert(record.method_ref.clone());
                    }
                    Err(_) => {
                        log::warn!(
                            "bug {}: unresolved coverage flag {} (test {}); flag dropped",
                            raw.id,
                            parsed,
                            t.name
                        );
                    }
                }
            }
            tests.push(TestExecution {
                name: t.name.clone(),
                passed: t.passed,
                covered,
            });
        }
        let coverage = CoverageProfile { tests };
        if coverage.failing_tests().count() == 0 {
            return Err(invalid(
                format!("{field}.tests"),
                "no failed test execution recorded",
            ));
        }
        for name in &raw.failing_tests {
            if !coverage.tests.iter().any(|t| &t.name == name && !t.passed) {
                return Err(invalid(
                    format!("{field}.failing_tests"),
                    format!("test {name} has no failed execution entry"),
                ));
            }
        }

        let mut failing_tests = Vec::new();
        let mut sorted_names = raw.failing_tests.clone();
        sorted_names.sort();
        sorted_names.dedup();
        for name in &sorted_names {
            let source = pool.get(name).cloned().ok_or_else(|| {
                invalid(
                    format!("{field}.failing_tests"),
                    format!("no source for test {name} in the test pool"),
                )
            })?;
            let helpers = helper_closure(name, &pool, HELPER_CLOSURE_DEPTH);
            failing_tests.push(FailingTest {
                name: name.clone(),
                source,
                helpers,
            });
        }

        let stack_trace = raw
            .stack_trace
            .iter()
            .map(|f| StackFrame {
                class_name: f.class.clone(),
                method_name: f.method.clone(),
                line: f.line,
                external: snapshot.class(&f.class).is_none(),
            })
            .collect();

        let mut ground_truth = BTreeSet::new();
        for reftext in &raw.ground_truth {
            let parsed = crate::model::parse_method_ref(reftext)
                .map_err(|e| invalid(format!("{field}.ground_truth"), e.to_string()))?;
            match snapshot.resolve(&parsed, true) {
                Ok(record) => {
                    ground_truth.insert(record.method_ref.clone());
                }
                Err(_) => {
                    log::warn!(
                        "bug {}: ground-truth ref {} not in snapshot; dropped",
                        raw.id,
                        parsed
                    );
                }
            }
        }

        let mut patched_bodies = BTreeMap::new();
        for (reftext, body) in &raw.patched_bodies {
            let parsed = crate::model::parse_method_ref(reftext)
                .map_err(|e| invalid(format!("{field}.patched_bodies"), e.to_string()))?;
            match snapshot.resolve(&parsed, true) {
                Ok(record) => {
                    patched_bodies.insert(record.method_ref.clone(), body.clone());
                }
                Err(_) => {
                    log::warn!(
                        "bug {}: patched body for unknown method {}; dropped",
                        raw.id,
                        parsed
                    );
                }
            }
        }

        cases.push(BugCase {
            bug_id: raw.id.clone(),
            error_message: raw.error_message.clone(),
            stack_trace,
            failing_tests,
            coverage,
            ground_truth,
            patched_bodies,
        });
    }
    cases.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
    Ok(cases)
}

/// Transitive helper-test closure of a failing test, found by name-reference
/// scan over the test source pool, breadth-first up to `max_depth`.
///
/// Order is deterministic: by depth, then by first occurrence position in
/// the referencing source.
pub fn helper_closure(
    root_test: &str,
    pool: &BTreeMap<String, String>,
    max_depth: u32,
) -> Vec<(String, String)> {
    let call_res: HashMap<&str, Regex> = pool
        .keys()
        .map(|name| {
            let re = Regex::new(&format!(r"\b{}\s*\(", regex::escape(name))).unwrap();
            (name.as_str(), re)
        })
        .collect();

    let mut visited: BTreeSet<&str> = BTreeSet::new();
    visited.insert(root_test);
    let mut result: Vec<(String, String)> = Vec::new();
    let mut frontier: Vec<&str> = vec![root_test];

    for _depth in 1..=max_depth {
        let mut next: Vec<&str> = Vec::new();
        for caller in &frontier {
            let Some(source) = pool.get(*caller) else {
                continue;
            };
            let mut found: Vec<(usize, &str)> = Vec::new();
            for (name, re) in &call_res {
                if visited.contains(name) {
                    continue;
                }
                if let Some(m) = re.find(source) {
                    found.push((m.start(), name));
                }
            }
            found.sort();
            for (_, name) in found {
                if visited.insert(name) {
                    next.push(name);
                    result.push((name.to_string(), pool[name].clone()));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_noise_hides_braces_in_strings_and_comments() {
        let src = "int x; // hidden {\nString s = \"{{{\"; /* {\n } */ char c = '{';\n";
        let (out, _) = blank_noise(src);
        assert_eq!(out.matches('{').count(), 0);
        assert_eq!(out.lines().count(), src.lines().count());
    }

    #[test]
    fn scan_finds_class_methods_and_constructor() {
        let src = "\
/** Doc for Acc. */
public class Acc {
    private int total;

    /** Creates an accumulator. */
    public Acc(int seed) {
        this.total = seed;
    }

    public int add(int v) {
        if (v > 0) {
            total += v;
        }
        return total;
    }

    private static String label() {
        return \"acc{\";
    }
}
";
        let classes = scan_source("Acc.java", src).unwrap();
        assert_eq!(classes.len(), 1);
        let acc = &classes[0];
        assert_eq!(acc.name, "Acc");
        let names: Vec<&str> = acc.methods.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, vec!["Acc", "add", "label"]);
        let ctor = &acc.methods[0];
        assert_eq!(ctor.decl_line, 6);
        assert_eq!((ctor.start_line, ctor.end_line), (6, 8));
        assert_eq!(ctor.doc.as_deref(), Some("Creates an accumulator."));
        let add = &acc.methods[1];
        assert_eq!(add.decl_line, 10);
        assert_eq!(add.end_line, 15);
    }

    #[test]
    fn scan_rejects_unbalanced_source() {
        let src = "class A { void f() { }"; // missing class close
        assert!(matches!(
            scan_source("A.java", src),
            Err(IndexError::Unbalanced { .. })
        ));
    }

    #[test]
    fn helper_closure_is_depth_capped_and_positional() {
        let mut pool = BTreeMap::new();
        pool.insert("t0".to_string(), "void t0() { h2(); h1(); }".to_string());
        pool.insert("h1".to_string(), "void h1() { h3(); }".to_string());
        pool.insert("h2".to_string(), "void h2() { }".to_string());
        pool.insert("h3".to_string(), "void h3() { h4(); }".to_string());
        pool.insert("h4".to_string(), "void h4() { h5(); }".to_string());
        pool.insert("h5".to_string(), "void h5() { }".to_string());
        let closure = helper_closure("t0", &pool, 3);
        let names: Vec<&str> = closure.iter().map(|(n, _)| n.as_str()).collect();
        // h2 appears before h1 in t0's source; h4 is depth 3; h5 is beyond.
        assert_eq!(names, vec!["h2", "h1", "h3", "h4"]);
    }

    #[test]
    fn helper_closure_ignores_unrelated_additions() {
        let mut pool = BTreeMap::new();
        pool.insert("t0".to_string(), "void t0() { helperA(); }".to_string());
        pool.insert("helperA".to_string(), "void helperA() { }".to_string());
        let before = helper_closure("t0", &pool, 3);
        pool.insert(
            "zz_unrelated".to_string(),
            "void zz_unrelated() { }".to_string(),
        );
        let after = helper_closure("t0", &pool, 3);
        assert_eq!(before, after);
    }
}
