//! Prompt templates with named placeholders.
//!
//! Templates are plain-text files. Defaults are embedded in the binary; a
//! directory override replaces any file by name. Placeholders look like
//! `{snake_case_name}`; anything else passes through verbatim, so JSON
//! examples inside templates need no escaping.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: no value for placeholder {{{placeholder}}}")]
    MissingValue {
        template: String,
        placeholder: String,
    },
    #[error("io error reading template override {0}: {1}")]
    Io(String, std::io::Error),
}

macro_rules! templates {
    ($(($field:ident, $file:literal)),+ $(,)?) => {
        /// The full template set used by the pipeline, memory generation,
        /// and refinement.
        #[derive(Debug, Clone)]
        pub struct PromptSet {
            $(pub $field: String,)+
        }

        impl Default for PromptSet {
            fn default() -> Self {
                PromptSet {
                    $($field: include_str!(concat!("../prompts/", $file)).to_string(),)+
                }
            }
        }

        impl PromptSet {
            /// Embedded defaults with per-file overrides from `dir`.
            pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
                let mut set = PromptSet::default();
                $(
                    let path = dir.join($file);
                    if path.is_file() {
                        set.$field = std::fs::read_to_string(&path)
                            .map_err(|e| PromptError::Io(path.display().to_string(), e))?;
                    }
                )+
                Ok(set)
            }
        }
    };
}

templates![
    (review, "review.txt"),
    (condense_classes, "condense_classes.txt"),
    (condense_methods, "condense_methods.txt"),
    (confirm, "confirm.txt"),
    (class_summary, "class_summary.txt"),
    (class_summary_chunk, "class_summary_chunk.txt"),
    (class_summary_merge, "class_summary_merge.txt"),
    (project_summary, "project_summary.txt"),
    (project_summary_group, "project_summary_group.txt"),
    (project_summary_merge, "project_summary_merge.txt"),
    (bug_report, "bug_report.txt"),
    (refine, "refine.txt"),
];

/// Renders a template by substituting `{name}` placeholders.
///
/// A `{` immediately followed by a lowercase identifier (a lowercase letter,
/// then lowercase letters or underscores) and `}` is a placeholder and must
/// have a value; any other brace sequence is literal.
pub fn render(
    template_name: &str,
    template: &str,
    values: &BTreeMap<&str, String>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_lowercase() {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'}' {
                let name = &template[i + 1..j];
                let value = values.get(name).ok_or_else(|| PromptError::MissingValue {
                    template: template_name.to_string(),
                    placeholder: name.to_string(),
                })?;
                out.push_str(value);
                i = j + 1;
                continue;
            }
        }
        let ch = template[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

/// Builder for the `values` map; keeps call sites short.
#[derive(Default)]
pub struct Values<'a>(pub BTreeMap<&'a str, String>);

impl<'a> Values<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &'a str, value: impl Into<String>) -> Self {
        self.0.insert(key, value.into());
        self
    }
}

/// An optional prompt section: empty input renders to nothing at all, so
/// the section header disappears with its content.
pub fn section(header: &str, body: &str) -> String {
    if body.is_empty() {
        String::new()
    } else {
        format!("## {header}\n{body}\n\n")
    }
}

/// Prefixes each line with its 1-based number, starting at `first_line`.
pub fn number_lines(text: &str, first_line: u32) -> String {
    text.lines()
        .enumerate()
        .map(|(i, l)| format!("{:>4} | {}", first_line + i as u32, l))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_placeholders_and_keeps_literal_braces() {
        let values = Values::new().set("name", "world").0;
        let out = render("t", "hi {name}: {\"k\": [1]} {Upper} {_}", &values).unwrap();
        assert_eq!(out, "hi world: {\"k\": [1]} {Upper} {_}");
    }

    #[test]
    fn missing_placeholder_value_is_an_error() {
        let err = render("t", "{oops}", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, PromptError::MissingValue { .. }));
    }

    #[test]
    fn empty_section_vanishes_entirely() {
        assert_eq!(section("Debugging guidance", ""), "");
        assert_eq!(
            section("Debugging guidance", "look at the parser"),
            "## Debugging guidance\nlook at the parser\n\n"
        );
    }

    #[test]
    fn default_templates_render_with_full_value_sets() {
        let set = PromptSet::default();
        // Smoke-check the two most placeholder-dense templates.
        let values = Values::new()
            .set("project_name", "p")
            .set("project_summary", "s")
            .set("error_message", "e")
            .set("stack_trace", "st")
            .set("failing_test_name", "t")
            .set("failing_test_source", "src")
            .set("helper_section", "")
            .set("guidance_section", "")
            .0;
        let prompt = render("review", &set.review, &values).unwrap();
        assert!(prompt.contains("project \"p\""));
        assert!(!prompt.contains('\u{0}'));
    }

    #[test]
    fn number_lines_is_one_based_and_aligned() {
        assert_eq!(number_lines("a\nb", 12), "  12 | a\n  13 | b");
    }

    #[test]
    fn overrides_replace_only_present_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("review.txt"), "custom {project_name}").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.review, "custom {project_name}");
        assert_eq!(set.confirm, PromptSet::default().confirm);
    }
}
