//! Property tests for the crate-wide invariants: identifier round-trips,
//! resolution, memory persistence, metric bounds, and rank invariance of
//! the coverage pre-filter.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use memfl_core::memgen::{compute_condense_metrics, select_training_batch};
use memfl_core::memory::{load_memory, save_memory};
use memfl_core::model::{
    parse_method_ref, BugCase, ClassRecord, CoverageProfile, DynamicMemory, ExternalMemory,
    FailingTest, LineSpan, MethodRecord, MethodRef, PipelineStep, ProjectSnapshot, RefinementEvent,
    StaticMemory, TestExecution,
};
use memfl_core::pipeline::{prefilter_classes, CondensationState};

fn ident() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9_.$]{0,12}"
}

fn method_ref() -> impl Strategy<Value = MethodRef> {
    (ident(), ident(), 1u32..100_000).prop_map(|(c, m, l)| MethodRef::new(c, m, l).unwrap())
}

/// A snapshot of 1-6 classes, each with 1-8 methods at distinct lines.
/// Returns the snapshot plus every contained ref.
fn snapshot_strategy() -> impl Strategy<Value = (ProjectSnapshot, Vec<MethodRef>)> {
    let class = (ident(), prop::collection::vec((ident(), 1u32..50), 1..8));
    prop::collection::vec(class, 1..6).prop_map(|classes| {
        let mut refs = Vec::new();
        let mut records = Vec::new();
        for (i, (name, methods)) in classes.into_iter().enumerate() {
            let class_name = format!("{name}_{i}");
            let mut method_records = Vec::new();
            let mut line = 1u32;
            for (m, gap) in methods {
                line += gap;
                let r = MethodRef::new(&class_name, m, line).unwrap();
                refs.push(r.clone());
                method_records.push(MethodRecord {
                    method_ref: r,
                    file: format!("src/{class_name}.x"),
                    body_span: LineSpan::new(line, line + 1),
                    body_text: "a\nb".into(),
                    doc_text: None,
                });
                line += 2;
            }
            records.push(ClassRecord {
                name: class_name.clone(),
                file: format!("src/{class_name}.x"),
                methods: method_records,
                source_text: String::new(),
            });
        }
        records.sort_by(|a, b| a.name.cmp(&b.name));
        (
            ProjectSnapshot {
                project_name: "p".into(),
                classes: records,
                index_fingerprint: "fp".into(),
            },
            refs,
        )
    })
}

fn memory_strategy() -> impl Strategy<Value = ExternalMemory> {
    let summaries = prop::collection::btree_map(ident(), ".*{0,40}", 0..5);
    let guidance = prop::collection::vec(".*{0,60}", 5);
    let events = prop::collection::vec((0usize..5, ident(), 1u32..4), 0..6);
    (".*{0,80}", summaries, guidance, events, 0u64..100).prop_map(
        |(project, class_summaries, g, events, version)| ExternalMemory {
            static_part: StaticMemory {
                project_summary: project,
                class_hashes: class_summaries
                    .keys()
                    .map(|k| (k.clone(), format!("h-{k}")))
                    .collect(),
                class_summaries,
            },
            dynamic_part: DynamicMemory {
                review: g[0].clone(),
                condense1: g[1].clone(),
                condense2: g[2].clone(),
                condense3: g[3].clone(),
                confirm: g[4].clone(),
            },
            version,
            provenance: events
                .into_iter()
                .map(|(s, bug_id, iteration)| RefinementEvent {
                    step: PipelineStep::ALL[s],
                    bug_id,
                    iteration,
                })
                .collect(),
            snapshot_fingerprint: "fp".into(),
        },
    )
}

proptest! {
    #[test]
    fn parse_of_canonical_render_is_identity(r in method_ref()) {
        prop_assert_eq!(parse_method_ref(&r.to_string()).unwrap(), r);
    }

    #[test]
    fn exact_resolution_succeeds_iff_triple_exists(
        (snapshot, refs) in snapshot_strategy(),
        probe in method_ref(),
    ) {
        // Every contained triple resolves.
        for r in &refs {
            prop_assert!(snapshot.resolve(r, false).is_ok(), "{}", r);
        }
        // A probe resolves exactly when it is one of the contained triples.
        let contained = refs.contains(&probe);
        prop_assert_eq!(snapshot.resolve(&probe, false).is_ok(), contained);
    }

    #[test]
    fn memory_save_load_is_identity(memory in memory_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.json");
        save_memory(&path, &memory).unwrap();
        let loaded = load_memory(&path, None).unwrap();
        prop_assert_eq!(loaded, memory);
    }

    #[test]
    fn condense_metrics_are_bounded_and_recall_one_on_retention(
        (snapshot, refs) in snapshot_strategy(),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..5),
        kept_extra in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
    ) {
        let truth: BTreeSet<MethodRef> =
            picks.iter().map(|i| refs[i.index(refs.len())].clone()).collect();
        let truth_classes: Vec<String> =
            truth.iter().map(|r| r.class_name().to_string()).collect();
        let mut kept_classes: Vec<String> = truth_classes.clone();
        for pick in &kept_extra {
            let class = &snapshot.classes[pick.index(snapshot.classes.len())];
            if !kept_classes.contains(&class.name) {
                kept_classes.push(class.name.clone());
            }
        }
        let mut selected: Vec<MethodRef> = truth.iter().cloned().collect();
        for pick in &kept_extra {
            let r = &refs[pick.index(refs.len())];
            if !selected.contains(r) {
                selected.push(r.clone());
            }
        }
        let state = CondensationState {
            prefiltered: kept_classes.clone(),
            kept_stage1: kept_classes.clone(),
            kept_stage2: kept_classes,
            selected_methods: selected,
        };
        let metrics = compute_condense_metrics(&state, &truth);
        for stage in [metrics.stage1, metrics.stage2, metrics.stage3] {
            prop_assert!((0.0..=1.0).contains(&stage.recall));
            prop_assert!((0.0..=1.0).contains(&stage.precision));
        }
        // Ground truth fully retained => recall is exactly 1 at every stage.
        prop_assert_eq!(metrics.stage1.recall, 1.0);
        prop_assert_eq!(metrics.stage2.recall, 1.0);
        prop_assert_eq!(metrics.stage3.recall, 1.0);
    }

    /// Duplicating every method of a class (same coverage flag per copy)
    /// scales numerator and denominator together, so the pre-filter order
    /// is unchanged.
    #[test]
    fn prefilter_order_is_invariant_under_method_duplication(
        spec in prop::collection::vec((1u32..6, 0u32..6, 2u32..5), 1..8),
    ) {
        let build = |duplicate: bool| {
            let mut classes = Vec::new();
            let mut covered: BTreeSet<MethodRef> = BTreeSet::new();
            for (i, (total, covered_wanted, factor)) in spec.iter().enumerate() {
                let name = format!("Class{i:02}");
                let covered_count = covered_wanted % (total + 1);
                let copies = if duplicate { *factor } else { 1 };
                let mut methods = Vec::new();
                for m in 0..*total {
                    for copy in 0..copies {
                        let line = (m * copies + copy) * 3 + 1;
                        let r = MethodRef::new(&name, format!("m{m}"), line).unwrap();
                        if m < covered_count {
                            covered.insert(r.clone());
                        }
                        methods.push(MethodRecord {
                            method_ref: r,
                            file: "f".into(),
                            body_span: LineSpan::new(line, line + 1),
                            body_text: "a\nb".into(),
                            doc_text: None,
                        });
                    }
                }
                classes.push(ClassRecord {
                    name,
                    file: "f".into(),
                    methods,
                    source_text: String::new(),
                });
            }
            let snapshot = ProjectSnapshot {
                project_name: "p".into(),
                classes,
                index_fingerprint: "fp".into(),
            };
            let coverage = CoverageProfile {
                tests: vec![TestExecution {
                    name: "t".into(),
                    passed: false,
                    covered,
                }],
            };
            prefilter_classes(&snapshot, &coverage, 60)
                .into_iter()
                .map(|c| c.name)
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(build(false), build(true));
    }

    #[test]
    fn training_batches_are_deterministic_and_distinct(
        n in 1usize..30,
        seed in any::<u64>(),
    ) {
        let bugs: Vec<BugCase> = (0..n)
            .map(|i| BugCase {
                bug_id: format!("bug-{i:03}"),
                error_message: String::new(),
                stack_trace: vec![],
                failing_tests: vec![FailingTest {
                    name: "t".into(),
                    source: String::new(),
                    helpers: vec![],
                }],
                coverage: CoverageProfile { tests: vec![] },
                ground_truth: BTreeSet::new(),
                patched_bodies: BTreeMap::new(),
            })
            .collect();
        let size = (n / 2).max(1);
        let a = select_training_batch(&bugs, size, seed).unwrap();
        let b = select_training_batch(&bugs, size, seed).unwrap();
        let ids = |v: &[&BugCase]| v.iter().map(|x| x.bug_id.clone()).collect::<Vec<_>>();
        prop_assert_eq!(ids(&a), ids(&b));
        let distinct: BTreeSet<String> = ids(&a).into_iter().collect();
        prop_assert_eq!(distinct.len(), size);
    }
}
