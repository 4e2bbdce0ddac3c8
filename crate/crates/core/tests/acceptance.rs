//! Acceptance suite. One PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails. Runs offline with every tool scripted.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use diagent_core::agent::{
    backtrack_turn, Agent, AgentConfig, BenchmarkItem, Difficulty, RunRecord, StepKind, Timing, TraceStatus,
};
use diagent_core::diagnostics::synth::{accuracy_log, error_log};
use diagent_core::diagnostics::{
    analyze, bucket_by_tokens, categorize_errors, outcome, ErrorCategory, Outcome, RuleBased,
};
use diagent_core::harness::{
    bootstrap_ci_with, score, summarize_ablation, AblationConfig, BootstrapParams, Harness, RunLog, Script,
    ScriptedProvider,
};
use diagent_core::model::{ReplyRule, ScriptedModel, ScriptedReply};
use diagent_core::tools::{render_tool_prompt, BackendKind, ScriptedTool, ToolRegistry, ToolSpec, TOOL_NAMES};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check, Duration);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn registry() -> ToolRegistry {
    let mut reg = ToolRegistry::new();
    reg.register("ocr", Arc::new(ScriptedTool::constant("k=120"))).unwrap();
    reg.register("caption", Arc::new(ScriptedTool::constant("a line chart"))).unwrap();
    reg.register("vqa", Arc::new(ScriptedTool::constant("yes"))).unwrap();
    reg.register("code", Arc::new(ScriptedTool::constant("4"))).unwrap();
    reg
}

fn item(id: &str) -> BenchmarkItem {
    BenchmarkItem {
        id: id.into(),
        dataset: "MMMU".into(),
        question: "What is the jam density?".into(),
        image_ref: "chart.png".into(),
        choices: Some(vec![("A".into(), "100".into()), ("B".into(), "120".into())]),
        gold_answer: "B".into(),
        difficulty: Difficulty::Medium,
    }
}

fn quiet() -> AgentConfig {
    AgentConfig { verify_enabled: false, timing: Timing::Accounted, ..AgentConfig::default() }
}

fn budget_enforcement() -> Check {
    let cfg = quiet();
    let agent = Agent::new(&cfg, &registry()).map_err(|e| e.to_string())?;
    let model = ScriptedModel::new((0..10).map(|i| ScriptedReply::with_tokens(format!("still thinking {i}"), 900)));
    let r = agent.run_item(&item("b1"), &model).map_err(|e| e.to_string())?;
    // 900 * 4 = 3600 < 4000 <= 900 * 5.
    ensure!(r.status() == TraceStatus::Unfinished, "status {:?}", r.status());
    ensure!(r.total_tokens() == 4500, "total tokens {}", r.total_tokens());
    ensure!(model.call_count() == 5, "{} model calls", model.call_count());
    ensure!(!r.correct, "unfinished record marked correct");
    let log = RunLog::new("MMMU".into(), 0, vec![r]).map_err(|e| e.to_string())?;
    let acc = score(&log).map_err(|e| e.to_string())?;
    ensure!(acc == 0.0, "scored {acc}");
    Ok(())
}

fn tool_gating() -> Check {
    let reg = registry();
    let asks: Vec<String> = TOOL_NAMES.iter().map(|t| format!("TOOL: {t} {{}}")).collect();
    for mask in 0..16u32 {
        let enabled: BTreeSet<String> =
            TOOL_NAMES.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, t)| t.to_string()).collect();
        let prompt = render_tool_prompt(&reg, &enabled);
        for t in TOOL_NAMES {
            let line = ToolSpec::standard(t, BackendKind::Scripted).unwrap().prompt_line();
            ensure!(prompt.contains(&line) == enabled.contains(t), "mask {mask:04b}: prompt line for {t}");
        }

        let cfg = AgentConfig { enabled_tools: enabled.clone(), ..quiet() };
        let agent = Agent::new(&cfg, &reg).map_err(|e| e.to_string())?;
        let model = ScriptedModel::from_texts(asks.iter().cloned().chain(["FINAL ANSWER: B".to_string()]));
        let r = agent.run_item(&item("g1"), &model).map_err(|e| e.to_string())?;
        let used: BTreeSet<String> = r.trace.tools_used().into_iter().map(String::from).collect();
        ensure!(used == enabled, "mask {mask:04b}: used {used:?}, enabled {enabled:?}");
        for s in &r.trace.steps {
            if let Some(t) = &s.tool_name {
                ensure!(enabled.contains(t), "mask {mask:04b}: trace contains disabled tool {t}");
            }
        }
        for t in TOOL_NAMES.iter().filter(|t| !enabled.contains(**t)) {
            let line = ToolSpec::standard(t, BackendKind::Scripted).unwrap().prompt_line();
            let leaked = model.calls().iter().flatten().any(|turn| turn.content.contains(&line));
            ensure!(!leaked, "mask {mask:04b}: disabled tool {t} advertised to the model");
        }
    }
    Ok(())
}

fn backtrack_script() -> (ScriptedModel, ScriptedModel) {
    let model = ScriptedModel::from_texts([
        "Reading the chart first.",
        "TOOL: ocr {\"region\": \"full\"}",
        "Let me look again carefully.",
        "FINAL ANSWER: B",
    ]);
    let verifier = ScriptedModel::from_texts(["INCONSISTENT: OCR value conflicts with earlier reading"]);
    (model, verifier)
}

fn backtrack_soundness() -> Check {
    let reg = registry();
    let cfg = AgentConfig { verify_enabled: true, ..quiet() };
    let agent = Agent::new(&cfg, &reg).map_err(|e| e.to_string())?;
    let (model, verifier) = backtrack_script();
    let r = agent.run_item_with_verifier(&item("k1"), &model, &verifier).map_err(|e| e.to_string())?;
    ensure!(r.trace.backtracks.len() == 1, "{} backtrack events", r.trace.backtracks.len());
    let ev = &r.trace.backtracks[0];
    let calls = model.calls();
    ensure!(calls.len() >= 3, "only {} model calls", calls.len());
    // Checkpoint 0 is the context the first turn was generated from.
    ensure!(ev.to_checkpoint == 0, "restored checkpoint {}", ev.to_checkpoint);
    let mut expected = calls[0].clone();
    expected.push(backtrack_turn(&ev.reason));
    let got = serde_json::to_vec(&calls[2]).unwrap();
    let want = serde_json::to_vec(&expected).unwrap();
    ensure!(got == want, "context after backtrack is not snapshot + marker");
    let markers = r.trace.steps.iter().filter(|s| s.kind == StepKind::BacktrackMarker).count();
    ensure!(markers == 1, "{markers} marker steps");

    let cfg0 = AgentConfig { max_backtracks: 0, ..cfg };
    let agent = Agent::new(&cfg0, &reg).map_err(|e| e.to_string())?;
    let (model, verifier) = backtrack_script();
    let r = agent.run_item_with_verifier(&item("k1"), &model, &verifier).map_err(|e| e.to_string())?;
    ensure!(r.trace.backtracks.is_empty(), "max_backtracks=0 produced {} events", r.trace.backtracks.len());
    ensure!(r.trace.steps.iter().all(|s| !s.discarded), "max_backtracks=0 discarded steps");
    Ok(())
}

fn diagnostics_oracle() -> Check {
    const WIDTH: u64 = 250;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut records = Vec::with_capacity(1000);
    for i in 0..1000 {
        let status = match rng.random_range(0..10) {
            0..6 => TraceStatus::Completed,
            6..9 => TraceStatus::Unfinished,
            _ => TraceStatus::Error,
        };
        let tokens = rng.random_range(0..6000);
        let mut r = RunRecord::synthetic(&format!("r{i:04}"), "D", status, rng.random_bool(0.6), tokens);
        // A stray correct flag on an unfinished run must still count as wrong.
        if status == TraceStatus::Unfinished && rng.random_bool(0.5) {
            r.correct = true;
        }
        records.push(r);
    }
    let log = RunLog::new("D".into(), 0, records).map_err(|e| e.to_string())?;
    let buckets = bucket_by_tokens(&log, WIDTH).map_err(|e| e.to_string())?;

    // Independent recount: bucket index -> [correct, incorrect, unfinished, error].
    let mut naive: BTreeMap<u64, [u64; 4]> = BTreeMap::new();
    for r in &log.records {
        let slot = match (r.status(), r.correct && !r.predicted.is_empty()) {
            (TraceStatus::Error, _) => 3,
            (TraceStatus::Unfinished, _) => 2,
            (TraceStatus::Completed, true) => 0,
            (TraceStatus::Completed, false) => 1,
        };
        naive.entry(r.total_tokens() / WIDTH).or_default()[slot] += 1;
    }
    let last = *naive.keys().next_back().unwrap();
    ensure!(buckets.len() as u64 == last + 1, "{} buckets, expected {}", buckets.len(), last + 1);
    for (i, b) in buckets.iter().enumerate() {
        let want = naive.get(&(i as u64)).copied().unwrap_or_default();
        let got = [b.n_correct, b.n_incorrect, b.n_unfinished, b.n_error];
        ensure!(got == want, "bucket {i}: {got:?} vs recount {want:?}");
        ensure!(b.bucket_lo == i as u64 * WIDTH && b.bucket_hi == b.bucket_lo + WIDTH, "bucket {i} bounds");
        let scored = want[0] + want[1] + want[2];
        let ratio = (scored > 0).then(|| want[0] as f64 / scored as f64);
        ensure!(b.accuracy_ratio == ratio, "bucket {i}: ratio {:?} vs {ratio:?}", b.accuracy_ratio);
    }
    let total: u64 = buckets.iter().map(|b| b.total()).sum();
    ensure!(total == 1000, "bucket totals {total}");
    for r in &log.records {
        if r.status() == TraceStatus::Unfinished {
            ensure!(outcome(r) == Outcome::Unfinished, "{} classed as {:?}", r.item_id(), outcome(r));
        }
    }
    let report = analyze(std::slice::from_ref(&log), WIDTH, &RuleBased).map_err(|e| e.to_string())?;
    report.check_invariants()?;
    ensure!(report.n_records() == 1000, "report holds {} records", report.n_records());
    Ok(())
}

const PUBLISHED_ABLATION: [(&str, [&str; 6]); 2] = [
    ("MMMU", ["68.9", "62.1", "65.4", "66.2", "67.0", "60.8"]),
    ("MathVista", ["74.2", "66.7", "70.3", "71.1", "72.0", "69.5"]),
];

fn ablation_table_round_trip() -> Check {
    const N: usize = 1000;
    let grid = AblationConfig::standard_grid();
    let labels: Vec<&str> = grid.iter().map(|c| c.label.as_str()).collect();
    ensure!(labels == ["Full", "- OCR", "- Python", "- Caption", "- QA", "- Backtrace"], "labels {labels:?}");
    let mut conditions = Vec::new();
    for (col, cond) in grid.iter().enumerate() {
        let mut logs = Vec::new();
        for (dataset, row) in PUBLISHED_ABLATION {
            let n_correct = (row[col].parse::<f64>().unwrap() * 10.0).round() as usize;
            for seed in [1, 2, 3] {
                logs.push(accuracy_log(dataset, seed, N, n_correct).map_err(|e| e.to_string())?);
            }
        }
        conditions.push((cond.clone(), logs));
    }
    let params = BootstrapParams { n_resamples: 200, ..BootstrapParams::default() };
    let table = summarize_ablation(&conditions, &params).map_err(|e| e.to_string())?;
    for (dataset, row) in PUBLISHED_ABLATION {
        let got = table.row(dataset).ok_or(format!("missing row {dataset}"))?.rendered();
        ensure!(got == row, "{dataset}: {got:?}");
    }
    Ok(())
}

fn error_categories() -> Check {
    let markers = [(ErrorCategory::Ocr, 38), (ErrorCategory::Spatial, 22), (ErrorCategory::Math, 19)];
    let log = error_log("MMMU", 50, 100, &markers).map_err(|e| e.to_string())?;
    let dist = categorize_errors(&log, &RuleBased);
    for (cat, want) in [
        (ErrorCategory::Ocr, 0.38),
        (ErrorCategory::Spatial, 0.22),
        (ErrorCategory::Math, 0.19),
        (ErrorCategory::Other, 0.21),
    ] {
        let got = dist.fraction(cat);
        ensure!(got == want, "{}: {got} != {want}", cat.as_str());
    }
    ensure!(dist.n_analyzed == 100 && dist.n_classifier_failures == 0, "{dist:?}");
    Ok(())
}

fn bootstrap_coverage() -> Check {
    const TRIALS: u64 = 500;
    const N: usize = 200;
    const P: f64 = 0.7;
    let covered: Result<Vec<bool>, String> = (0..TRIALS)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let n_correct = (0..N).filter(|_| rng.random_bool(P)).count();
            let log = accuracy_log("B", 0, N, n_correct).map_err(|e| e.to_string())?;
            let params = BootstrapParams { rng_seed: 1_000_000 + trial, ..BootstrapParams::default() };
            let s = bootstrap_ci_with(&[log], &params).map_err(|e| e.to_string())?;
            Ok(s.ci_low <= P && P <= s.ci_high)
        })
        .collect();
    let hits = covered?.into_iter().filter(|&c| c).count();
    let rate = hits as f64 / TRIALS as f64;
    ensure!((0.92..=0.98).contains(&rate), "coverage {rate:.3} ({hits}/{TRIALS})");
    println!("  coverage {rate:.3} ({hits}/{TRIALS}), 10000 resamples per interval");
    Ok(())
}

fn parallelism_transparency() -> Check {
    let rules = vec![
        ReplyRule {
            when: Some("[ocr result]".into()),
            unless: None,
            reply: ScriptedReply::with_tokens("FINAL ANSWER: B", 12),
        },
        ReplyRule { when: None, unless: None, reply: ScriptedReply::with_tokens("TOOL: ocr {}", 9) },
    ];
    let provider = ScriptedProvider { default: Some(Script::Rules(rules)), ..ScriptedProvider::default() };
    let reg = registry();
    let items: Vec<BenchmarkItem> = (0..10)
        .map(|i| {
            let mut it = item(&format!("p{i:02}"));
            if i % 3 == 0 {
                it.dataset = "MathVista".into();
            }
            it
        })
        .collect();
    let cfg = AgentConfig { verify_enabled: true, ..quiet() };
    let run = |parallelism| {
        let h = Harness { provider: &provider, tools: &reg, parallelism };
        h.run_benchmark(&items, &cfg, &[1, 2]).map_err(|e| e.to_string())
    };
    let (a, b) = (run(1)?, run(4)?);
    let n: usize = a.iter().map(|l| l.records.len()).sum();
    ensure!(n == 20, "{n} records");
    let (ja, jb) = (serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    ensure!(ja == jb, "logs differ between parallelism 1 and 4");
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("budget enforcement", budget_enforcement, Duration::from_secs(1)),
        ("tool gating, all 16 subsets", tool_gating, Duration::from_secs(5)),
        ("backtrack soundness", backtrack_soundness, Duration::MAX),
        ("diagnostics oracle equivalence", diagnostics_oracle, Duration::from_secs(5)),
        ("ablation table round-trip", ablation_table_round_trip, Duration::MAX),
        ("error-category round-trip", error_categories, Duration::MAX),
        ("bootstrap coverage", bootstrap_coverage, Duration::from_secs(60)),
        ("parallelism transparency", parallelism_transparency, Duration::MAX),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = result.and_then(|()| {
            if elapsed > limit {
                Err(format!("took {elapsed:?}, limit {limit:?}"))
            } else {
                Ok(())
            }
        });
        match result {
            Ok(()) => println!("PASS {name} ({} ms)", elapsed.as_millis()),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} ({} ms): {e}", elapsed.as_millis());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
