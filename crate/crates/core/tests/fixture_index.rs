//! Indexing the bundled mini project: builtin scan against the committed
//! golden span table, manifest mode against the builtin result, and bug
//! loading.

use std::collections::BTreeMap;
use std::path::PathBuf;

use memfl_core::index::{index_tree, load_bug_cases, IndexMode};

fn fixture_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini")
}

#[derive(serde::Deserialize)]
struct GoldenClass {
    file: String,
    methods: Vec<GoldenMethod>,
}

#[derive(serde::Deserialize)]
struct GoldenMethod {
    name: String,
    decl_line: u32,
    span: (u32, u32),
}

#[test]
fn builtin_index_matches_golden_span_table() {
    let root = fixture_root();
    let snapshot = index_tree(&root, &IndexMode::builtin_default()).unwrap();
    let golden: BTreeMap<String, GoldenClass> =
        serde_json::from_str(&std::fs::read_to_string(root.join("golden/spans.json")).unwrap())
            .unwrap();

    assert_eq!(snapshot.classes.len(), 8);
    assert_eq!(snapshot.classes.len(), golden.len());
    for class in &snapshot.classes {
        let expect = &golden[&class.name];
        assert_eq!(class.file, expect.file, "{}", class.name);
        assert_eq!(class.methods.len(), expect.methods.len(), "{}", class.name);
        for (method, want) in class.methods.iter().zip(&expect.methods) {
            assert_eq!(method.method_ref.method_name(), want.name);
            assert_eq!(
                method.method_ref.decl_line(),
                want.decl_line,
                "{}",
                want.name
            );
            assert_eq!(
                (method.body_span.start, method.body_span.end),
                want.span,
                "{}.{}",
                class.name,
                want.name
            );
            assert_eq!(
                method.body_text.lines().count() as u32,
                method.body_span.len(),
                "body must cover exactly the span"
            );
        }
    }
}

#[test]
fn manifest_and_builtin_modes_agree() {
    let root = fixture_root();
    let manifest = index_tree(&root, &IndexMode::Manifest).unwrap();
    let builtin = index_tree(&root, &IndexMode::builtin_default()).unwrap();
    assert_eq!(manifest.index_fingerprint, builtin.index_fingerprint);
    assert_eq!(manifest.classes.len(), builtin.classes.len());
    for (a, b) in manifest.classes.iter().zip(&builtin.classes) {
        assert_eq!(a.name, b.name);
        let refs = |c: &memfl_core::ClassRecord| {
            c.methods
                .iter()
                .map(|m| {
                    (
                        m.method_ref.to_string(),
                        (m.body_span.start, m.body_span.end),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(refs(a), refs(b), "{}", a.name);
    }
}

#[test]
fn indexing_is_deterministic() {
    let root = fixture_root();
    let a = index_tree(&root, &IndexMode::Manifest).unwrap();
    let b = index_tree(&root, &IndexMode::Manifest).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.index_fingerprint, b.index_fingerprint);
}

#[test]
fn bug_cases_load_with_helper_closures() {
    let root = fixture_root();
    let snapshot = index_tree(&root, &IndexMode::Manifest).unwrap();
    let bugs = load_bug_cases(&snapshot, &root).unwrap();
    assert_eq!(bugs.len(), 10);

    for bug in &bugs {
        assert!(!bug.failing_tests.is_empty(), "{}", bug.bug_id);
        assert!(!bug.ground_truth.is_empty(), "{}", bug.bug_id);
        assert!(bug.coverage.failing_tests().count() >= 1);
        // Every coverage flag resolves exactly after sanitization.
        for test in &bug.coverage.tests {
            for m in &test.covered {
                assert!(snapshot.resolve(m, false).is_ok(), "{m}");
            }
        }
        assert!(bug.has_patches(), "{}", bug.bug_id);
    }

    // testSubtotal calls seedCatalog then makeCart.
    let bug1 = bugs.iter().find(|b| b.bug_id == "bug-001").unwrap();
    let test = bug1.selected_failing_test().unwrap();
    assert_eq!(test.name, "testSubtotal");
    let helper_names: Vec<&str> = test.helpers.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(helper_names, vec!["seedCatalog", "makeCart"]);

    // makeOrderService itself calls seedCatalog (depth 2).
    let bug5 = bugs.iter().find(|b| b.bug_id == "bug-005").unwrap();
    let test5 = bug5.selected_failing_test().unwrap();
    let names5: Vec<&str> = test5.helpers.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names5.contains(&"makeOrderService"));
    assert!(names5.contains(&"seedCatalog"));
    assert!(names5.contains(&"makeCart"));

    // Test-class frames are flagged external; product frames are not.
    let frames = &bug1.stack_trace;
    assert!(frames
        .iter()
        .any(|f| f.class_name == "MinimartTest" && f.external));
}

#[test]
fn empty_directory_is_rejected_in_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(index_tree(dir.path(), &IndexMode::Manifest).is_err());
    assert!(index_tree(dir.path(), &IndexMode::builtin_default()).is_err());
}
