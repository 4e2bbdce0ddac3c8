//! Synthetic run logs with controlled accuracy and error-marker rates.

use serde_json::json;

use super::ErrorCategory;
use crate::agent::{ReasoningStep, RunRecord, StepKind, ToolOutcome, TraceStatus};
use crate::harness::{HarnessError, RunLog};

fn call(tool: &str, args: serde_json::Value) -> ReasoningStep {
    let mut s = ReasoningStep::new(StepKind::ToolCall, format!("TOOL: {tool} {args}"), 12);
    s.tool_name = Some(tool.into());
    s.tool_args = Some(args);
    s
}

fn result(tool: &str, text: &str, success: bool) -> ReasoningStep {
    let mut s = ReasoningStep::new(StepKind::ToolResult, text, 0);
    s.tool_name = Some(tool.into());
    s.outcome = Some(ToolOutcome {
        success,
        error: (!success).then(|| text.to_string()),
        duration_ms: 0,
        token_cost: 0,
    });
    s
}

fn steps_for(category: Option<ErrorCategory>) -> Vec<ReasoningStep> {
    let think = |t: &str, n| ReasoningStep::new(StepKind::Thought, t, n);
    let answer = |t: &str| ReasoningStep::new(StepKind::FinalAnswer, format!("FINAL ANSWER: {t}"), 8);
    match category {
        Some(ErrorCategory::Ocr) => vec![
            call("ocr", json!({})),
            result("ocr", "axis label kj=150", true),
            think("Using kj=120 from the chart.", 40),
            answer("120"),
        ],
        Some(ErrorCategory::Spatial) => vec![
            call("caption", json!({})),
            result("caption", "two bars and a legend", true),
            ReasoningStep::new(StepKind::Verification, "INCONSISTENT: the taller bar is left of the legend, not right", 15),
            think("The second bar is the taller one.", 30),
            answer("B"),
        ],
        Some(ErrorCategory::Math) => vec![
            call("code", json!({"source": "assert 2 + 2 == 5"})),
            result("code", "RuntimeError: Traceback (most recent call last):\nAssertionError", false),
            think("The total is 5.", 30),
            answer("5"),
        ],
        Some(ErrorCategory::Other) | None => vec![think("The chart shows growth.", 30), answer("C")],
    }
}

/// A completed record carrying the marker pattern for `category`; `None`
/// gives a marker-free trace.
pub fn marker_record(id: &str, dataset: &str, category: Option<ErrorCategory>, correct: bool) -> RunRecord {
    let mut steps = steps_for(category);
    for (i, s) in steps.iter_mut().enumerate() {
        s.index = i;
    }
    let total = steps.iter().map(|s| s.token_count).sum();
    let mut r = RunRecord::synthetic(id, dataset, TraceStatus::Completed, correct, total);
    r.trace.steps = steps;
    r
}

/// `n_correct` correct records followed by incorrect ones with the given
/// number of markers per category; the rest are marker-free.
pub fn error_log(
    dataset: &str,
    n_correct: usize,
    n_incorrect: usize,
    markers: &[(ErrorCategory, usize)],
) -> Result<RunLog, HarnessError> {
    let mut records = Vec::with_capacity(n_correct + n_incorrect);
    for i in 0..n_correct {
        records.push(marker_record(&format!("c{i:05}"), dataset, None, true));
    }
    let mut cats: Vec<Option<ErrorCategory>> =
        markers.iter().flat_map(|&(c, n)| std::iter::repeat_n(Some(c), n)).collect();
    assert!(cats.len() <= n_incorrect, "more markers than incorrect records");
    cats.resize(n_incorrect, None);
    for (i, c) in cats.into_iter().enumerate() {
        records.push(marker_record(&format!("w{i:05}"), dataset, c, false));
    }
    RunLog::new(dataset.into(), 0, records)
}

/// `n` items of which the first `n_correct` are correct.
pub fn accuracy_log(dataset: &str, seed: u64, n: usize, n_correct: usize) -> Result<RunLog, HarnessError> {
    let records = (0..n)
        .map(|i| {
            let mut r = RunRecord::synthetic(&format!("i{i:05}"), dataset, TraceStatus::Completed, i < n_correct, 300);
            r.seed = seed;
            r
        })
        .collect();
    RunLog::new(dataset.into(), seed, records)
}
