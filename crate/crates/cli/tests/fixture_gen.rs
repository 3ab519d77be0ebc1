//! Regenerates the committed mini-project fixtures: scripted reply files,
//! static memory, golden prompts, and the replay cassettes.
//!
//! Run manually after changing prompt templates, the pipeline configuration
//! defaults, or the mini project itself, then review the diff:
//!
//! ```bash
//! cargo test -p memfl --test fixture_gen -- --ignored
//! ```

use std::fs;
use std::path::PathBuf;

use memfl_core::eval::{cross_validate, EvalConfig};
use memfl_core::gateway::{Gateway, GatewayConfig, PriceTable, ScriptEntry, ScriptedProvider};
use memfl_core::index::{index_tree, load_bug_cases, IndexMode};
use memfl_core::memgen::MemgenConfig;
use memfl_core::memory::{generate_static_memory, load_memory, save_memory, SummarizeConfig};
use memfl_core::pipeline::{localize_many, PipelineConfig, PipelineContext, StageToggles};
use memfl_core::prompts::PromptSet;
use memfl_core::PipelineStep;

fn fixture_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini")
}

fn prices() -> PriceTable {
    PriceTable::default().with_price("gpt-4o-mini", 0.15, 0.60)
}

fn class_summary(name: &str) -> String {
    let body = match name {
        "Cart" => "Holds the shopping cart as an insertion-ordered map from SKU to quantity. Provides addItem/removeItem, per-SKU quantityOf, the total unit count via totalQuantity, an iterator over SKUs, and emptiness/clear operations.",
        "Catalog" => "Product registry of the shop. addProduct records the unit price and shipping weight per SKU; priceOf and weightOf look them up; contains and size expose membership and the registered product count.",
        "DiscountPolicy" => "Discount rules applied to a cart subtotal: percentage discounts (percentOff), flat discounts capped by the subtotal (flatOff, clampDiscount), and bestDiscount to pick the better of two candidate discounts for the customer.",
        "Inventory" => "Per-SKU stock ledger. addStock and removeStock adjust levels, stockOf reads them, isAvailable compares against a wanted quantity, and reserve atomically checks availability and removes the stock for an order.",
        "OrderService" => "Order workflow facade wiring pricing, discounts, taxes, and shipping together. validateOrder accepts carts with items, orderTotal computes subtotal - discount + tax + shipping, receiptLine formats one receipt line, placeOrder validates then totals.",
        "PricingEngine" => "Computes money amounts from catalog prices: subtotal sums line totals over the cart, lineTotal prices one SKU at a quantity, and round2 rounds to cents half-up.",
        "ShippingCalculator" => "Weight-based shipping: a flat baseCost, a weightSurcharge for parcels above ten weight units, a free-shipping threshold on the subtotal (qualifiesForFree), and costFor combining them.",
        "TaxTable" => "Region-keyed sales tax rates. addRegion and hasRegion manage known regions, rateFor returns a region's rate falling back to the default, and taxOn applies the rate to a net amount.",
        other => panic!("unknown class {other}"),
    };
    body.to_string()
}

const PROJECT_SUMMARY: &str = "minimart is a small retail checkout library. A Catalog holds products with prices and weights, Inventory tracks stock, and a Cart collects SKU quantities. PricingEngine turns a cart into money amounts, DiscountPolicy and TaxTable adjust them, ShippingCalculator prices delivery, and OrderService orchestrates validation and the final order total.";

struct BugScript {
    id: &'static str,
    review: &'static str,
    condense1: &'static [&'static str],
    condense2: &'static [&'static str],
    /// (class, method tokens) per kept class.
    condense3: &'static [(&'static str, &'static [&'static str])],
    confirm: &'static [&'static str],
}

const BUG_SCRIPTS: &[BugScript] = &[
    BugScript {
        id: "bug-001",
        review: "testSubtotal builds a cart of 3 apples and 2 pears and expects a subtotal of 9.0 but gets 3.75, which is exactly the sum of the two unit prices. The subtotal computation is ignoring line quantities, so the fault is in the pricing path that iterates the cart.",
        condense1: &["PricingEngine", "Cart", "Catalog"],
        condense2: &["PricingEngine"],
        condense3: &[("PricingEngine", &["subtotal@12"])],
        confirm: &["PricingEngine@subtotal@12", "Cart@quantityOf@16", "Catalog@priceOf@15"],
    },
    BugScript {
        id: "bug-002",
        review: "testDiscountCap applies a flat discount of 12.0 to a 10.0 subtotal and expects the discount to be capped at 10.0, but 12.0 comes back. The clamp that should bound a discount by its subtotal is not enforcing the upper limit.",
        condense1: &["DiscountPolicy"],
        condense2: &["DiscountPolicy"],
        condense3: &[("DiscountPolicy", &["clampDiscount@22", "flatOff@12"])],
        confirm: &["DiscountPolicy@clampDiscount@22", "DiscountPolicy@flatOff@12"],
    },
    BugScript {
        id: "bug-003",
        review: "testTaxRate registers region CA at 0.0725 and expects rateFor to return it, but the default 0.0 comes back. The lookup is failing for a region that was just added, so the region membership check in the rate lookup is wrong.",
        condense1: &["TaxTable"],
        condense2: &["TaxTable"],
        condense3: &[("TaxTable", &["rateFor@17", "addRegion@8"])],
        confirm: &["TaxTable@rateFor@17", "TaxTable@addRegion@8"],
    },
    BugScript {
        id: "bug-004",
        review: "testShippingWeight expects a 2.0 surcharge for a 14-unit parcel (0.50 per unit above 10) but gets 0.0. The surcharge threshold comparison is not triggering for weights that should pay extra.",
        condense1: &["ShippingCalculator"],
        condense2: &["ShippingCalculator"],
        condense3: &[("ShippingCalculator", &["weightSurcharge@13"])],
        confirm: &["ShippingCalculator@weightSurcharge@13"],
    },
    BugScript {
        id: "bug-005",
        review: "testOrderTotal expects 14.55 but gets 9.65; the difference is exactly the base shipping cost plus rounding. The grand total never includes the shipping component, so the order totalling method is dropping a term.",
        condense1: &["OrderService", "PricingEngine", "TaxTable", "DiscountPolicy"],
        condense2: &["OrderService", "PricingEngine"],
        condense3: &[
            ("OrderService", &["orderTotal@26"]),
            ("PricingEngine", &["subtotal@12"]),
        ],
        confirm: &["OrderService@orderTotal@26", "PricingEngine@subtotal@12"],
    },
    BugScript {
        id: "bug-006",
        review: "testRemoveStock removes 4 units from a stock of 2 and expects the level to floor at 0, but it reaches -2. The stock removal path is writing a negative level instead of clamping at zero.",
        condense1: &["Inventory"],
        condense2: &["Inventory"],
        // Drifted line on purpose: resolution tolerates nearby lines.
        condense3: &[("Inventory", &["removeStock@14"])],
        confirm: &["Inventory@removeStock@13", "Inventory@reserve@32"],
    },
    BugScript {
        id: "bug-007",
        review: "testCartQuantity expects 5 total units for a cart holding 3 apples and 2 pears but gets 2, which equals the number of distinct SKUs. The total-quantity computation counts line items instead of summing their quantities.",
        condense1: &["Cart"],
        condense2: &["Cart"],
        condense3: &[("Cart", &["totalQuantity@25"])],
        confirm: &["Cart@totalQuantity@25", "Cart@addItem@7"],
    },
    BugScript {
        id: "bug-008",
        review: "testUnknownSku asks the catalog for a SKU that was never registered and expects an IllegalArgumentException, but the price lookup silently returns 0.0. The unknown-SKU guard in the price lookup is missing.",
        condense1: &["Catalog"],
        condense2: &["Catalog"],
        condense3: &[("Catalog", &["priceOf@15"])],
        confirm: &["Catalog@priceOf@15"],
    },
    BugScript {
        id: "bug-009",
        review: "testBestDiscount expects the larger of two discounts (8.0) but gets the smaller (5.0). One of the discount selection helpers is choosing the wrong extreme.",
        condense1: &["DiscountPolicy"],
        condense2: &["DiscountPolicy"],
        condense3: &[("DiscountPolicy", &["bestDiscount@17", "percentOff@7"])],
        // Deliberately imperfect ranking: ground truth lands at rank 2.
        confirm: &["DiscountPolicy@percentOff@7", "DiscountPolicy@bestDiscount@17"],
    },
    BugScript {
        id: "bug-010",
        review: "testValidateOrder submits a cart with items and expects it to be accepted, but validation rejects it. The emptiness check in order validation is inverted.",
        condense1: &["OrderService", "Cart"],
        condense2: &["OrderService"],
        condense3: &[("OrderService", &["validateOrder@18"])],
        confirm: &["OrderService@validateOrder@18", "Cart@isEmpty@33"],
    },
];

fn json_array(items: &[&str]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("\"{s}\"")).collect();
    format!("```json\n[{}]\n```", quoted.join(", "))
}

fn localize_entries() -> Vec<ScriptEntry> {
    let mut entries = Vec::new();
    for bug in BUG_SCRIPTS {
        entries.push(ScriptEntry::new(format!("review:{}", bug.id), bug.review).sticky());
        entries.push(
            ScriptEntry::new(format!("condense1:{}", bug.id), json_array(bug.condense1)).sticky(),
        );
        entries.push(
            ScriptEntry::new(format!("condense2:{}", bug.id), json_array(bug.condense2)).sticky(),
        );
        for (class, methods) in bug.condense3 {
            entries.push(
                ScriptEntry::new(format!("condense3:{}:{class}", bug.id), json_array(methods))
                    .sticky(),
            );
        }
        entries.push(
            ScriptEntry::new(format!("confirm:{}", bug.id), json_array(bug.confirm)).sticky(),
        );
    }
    entries
}

fn summarize_entries() -> Vec<ScriptEntry> {
    let mut entries: Vec<ScriptEntry> = [
        "Cart",
        "Catalog",
        "DiscountPolicy",
        "Inventory",
        "OrderService",
        "PricingEngine",
        "ShippingCalculator",
        "TaxTable",
    ]
    .iter()
    .map(|name| ScriptEntry::new(format!("static:class:{name}"), class_summary(name)).sticky())
    .collect();
    entries.push(ScriptEntry::new("static:project", PROJECT_SUMMARY).sticky());
    entries
}

fn report_entries() -> Vec<ScriptEntry> {
    BUG_SCRIPTS
        .iter()
        .map(|bug| {
            let report = format!(
                "Failure summary: {review}\n\nRoot cause: the original method mishandles the case the failing test exercises.\n\nBuggy methods: see the original and fixed bodies above; the fix is the minimal change restoring the documented behavior.\n\nDebugging hints: compare the expected and actual values in the error message against the arithmetic in the covered methods.",
                review = bug.review
            );
            ScriptEntry::new(format!("report:{}", bug.id), report).sticky()
        })
        .collect()
}

/// Standalone memgen script: one confirm-guidance update, reports, and the
/// localization replies.
fn memgen_entries() -> Vec<ScriptEntry> {
    let mut entries = vec![
        ScriptEntry::new(
            "refine:confirm:",
            "When two candidates tie, prefer the method whose arithmetic the error message contradicts directly.",
        ),
        ScriptEntry::new("refine:", "NO_UPDATE").sticky(),
    ];
    entries.extend(report_entries());
    entries.extend(localize_entries());
    entries
}

/// Full eval script: refinements first (their tags embed step names), then
/// reports, then the localization replies.
fn eval_entries() -> Vec<ScriptEntry> {
    let mut entries = vec![
        ScriptEntry::new(
            "fold0:iter1:refine:review:",
            "Read the expected/actual values in the error message first; in this project they usually identify the faulty arithmetic directly. Name the class whose responsibility matches that arithmetic.",
        ),
        ScriptEntry::new("refine:", "NO_UPDATE").sticky(),
    ];
    entries.extend(report_entries());
    entries.extend(localize_entries());
    entries
}

fn write_script(path: &PathBuf, entries: &[ScriptEntry]) {
    let text = serde_json::to_string_pretty(entries).unwrap();
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text + "\n").unwrap();
}

#[test]
#[ignore = "regenerates committed fixtures; run manually and review the diff"]
fn regenerate_mini_fixtures() {
    let root = fixture_root();
    let snapshot = index_tree(&root, &IndexMode::Manifest).unwrap();
    let bugs = load_bug_cases(&snapshot, &root).unwrap();
    let prompts = PromptSet::default();
    let pipeline_config = PipelineConfig::default();

    // 1. Scripted reply files.
    write_script(&root.join("scripts/localize.json"), &localize_entries());
    write_script(&root.join("scripts/summarize.json"), &summarize_entries());
    write_script(&root.join("scripts/memgen.json"), &memgen_entries());

    // 2. Static memory.
    let gateway = Gateway::new(
        Box::new(ScriptedProvider::new(summarize_entries())),
        GatewayConfig {
            prices: prices(),
            ..Default::default()
        },
    )
    .unwrap();
    let memory = generate_static_memory(
        &snapshot,
        &gateway,
        &prompts,
        &SummarizeConfig::default(),
        None,
    )
    .unwrap();
    save_memory(&root.join("memory.json"), &memory).unwrap();

    // 3. Golden prompts (empty dynamic memory).
    let memory = load_memory(&root.join("memory.json"), None).unwrap();
    let golden = root.join("golden");
    fs::create_dir_all(&golden).unwrap();
    let bug1 = bugs.iter().find(|b| b.bug_id == "bug-001").unwrap();
    {
        let gw = Gateway::new(
            Box::new(ScriptedProvider::new(vec![])),
            GatewayConfig::default(),
        )
        .unwrap();
        let ctx = PipelineContext {
            snapshot: &snapshot,
            memory: &memory,
            gateway: &gw,
            prompts: &prompts,
            config: &pipeline_config,
            toggles: StageToggles::default(),
            tag_prefix: String::new(),
        };
        let review_prompt = memfl_core::pipeline::render_review_prompt(&ctx, bug1).unwrap();
        fs::write(golden.join("prompt_review_bug-001.txt"), review_prompt).unwrap();
        let report_prompt =
            memfl_core::memgen::render_bug_report_prompt(&snapshot, bug1, &memory, &prompts)
                .unwrap();
        fs::write(golden.join("prompt_report_bug-001.txt"), report_prompt).unwrap();
    }

    // Ablation prompt trails for bug-001 under each toggle set.
    for (label, toggles) in [
        ("full", StageToggles::default()),
        (
            "noreview",
            StageToggles {
                bug_review: false,
                ..Default::default()
            },
        ),
        (
            "nocondense",
            StageToggles {
                condensation: false,
                ..Default::default()
            },
        ),
    ] {
        let gw = Gateway::new(
            Box::new(ScriptedProvider::new(localize_entries())),
            GatewayConfig {
                prices: prices(),
                ..Default::default()
            },
        )
        .unwrap();
        let ctx = PipelineContext {
            snapshot: &snapshot,
            memory: &memory,
            gateway: &gw,
            prompts: &prompts,
            config: &pipeline_config,
            toggles,
            tag_prefix: String::new(),
        };
        localize_many(&ctx, &[bug1]).remove(0).unwrap();
        let mut trail = String::new();
        for exchange in gw.ledger() {
            trail.push_str(&format!(
                "=== {} ===\n{}\n",
                exchange.request.tag,
                exchange.request.prompt_text()
            ));
        }
        fs::write(golden.join(format!("prompts_{label}_bug-001.txt")), trail).unwrap();
    }

    // 4. Replay cassette for `memfl localize --bug all`.
    {
        let gw = Gateway::new(
            Box::new(ScriptedProvider::new(localize_entries())),
            GatewayConfig {
                prices: prices(),
                record_cassette: Some(root.join("cassette-localize.jsonl")),
                ..Default::default()
            },
        )
        .unwrap();
        let ctx = PipelineContext {
            snapshot: &snapshot,
            memory: &memory,
            gateway: &gw,
            prompts: &prompts,
            config: &pipeline_config,
            toggles: StageToggles::default(),
            tag_prefix: String::new(),
        };
        let refs: Vec<&memfl_core::BugCase> = bugs.iter().collect();
        for result in localize_many(&ctx, &refs) {
            result.unwrap();
        }
    }

    // 5. Replay cassette for `memfl eval` (settings mirror memfl.toml).
    {
        let gw = Gateway::new(
            Box::new(ScriptedProvider::new(eval_entries())),
            GatewayConfig {
                prices: prices(),
                record_cassette: Some(root.join("cassette.jsonl")),
                ..Default::default()
            },
        )
        .unwrap();
        let outcome = cross_validate(
            &snapshot,
            &bugs,
            &memory,
            &gw,
            &prompts,
            &pipeline_config,
            StageToggles::default(),
            &MemgenConfig {
                batch_size: 2,
                iterations: 1,
                seed: 17,
                resample_each_iteration: false,
            },
            &EvalConfig {
                folds: 5,
                seed: 17,
                no_cv: false,
                tolerance: 2,
            },
            None,
        )
        .unwrap();
        assert!(
            outcome.acc1 >= 8,
            "cassette must rank truth first for most bugs, got {}",
            outcome.acc1
        );
        println!(
            "eval cassette recorded: acc@1 {} acc@3 {} acc@5 {}, {} exchanges",
            outcome.acc1,
            outcome.acc3,
            outcome.acc5,
            gw.ledger_len()
        );
    }

    // Sanity: memory fingerprint round-trips and dynamic slots exist.
    let reloaded =
        load_memory(&root.join("memory.json"), Some(&snapshot.index_fingerprint)).unwrap();
    for step in PipelineStep::ALL {
        assert_eq!(reloaded.dynamic_part.get(step), "");
    }
}
