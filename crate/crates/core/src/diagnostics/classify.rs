//! Error categorization of incorrect traces.

use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::agent::{normalize_number, parse_verdict, RunRecord, StepKind, Verdict};
use crate::model::{ChatTurn, ModelClient, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    #[serde(rename = "OCR")]
    Ocr,
    Spatial,
    Math,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [Self::Ocr, Self::Spatial, Self::Math, Self::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ocr => "OCR",
            Self::Spatial => "Spatial",
            Self::Math => "Math",
            Self::Other => "Other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

pub trait ErrorClassifier: Send + Sync {
    fn name(&self) -> &str;
    fn classify(&self, record: &RunRecord) -> Result<ErrorCategory, String>;
}

/// Tools whose output is a reading of the image.
const PERCEPTION_TOOLS: [&str; 3] = ["ocr", "caption", "vqa"];

static QUANTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b([A-Za-z_][A-Za-z0-9_]*)\s*[=:]\s*(-?\d[\d,]*(?:\.\d+)?)").unwrap());

static SPATIAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(left|right|above|below|beneath|under|over|behind|in front of|between|next to|adjacent|inside|outside|top|bottom|upper|lower|clockwise|counterclockwise|parallel|perpendicular|opposite)\b",
    )
    .unwrap()
});

static CODE_FAILURE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Traceback \(most recent call last\)|AssertionError|ZeroDivisionError").unwrap());

fn quantities(text: &str) -> impl Iterator<Item = (String, String)> + '_ {
    QUANTITY.captures_iter(text).map(|c| (c[1].to_ascii_lowercase(), normalize_number(&c[2])))
}

/// Marker rules applied in priority order: OCR, then Spatial, then Math.
///
/// - OCR: a perception tool reported `name=value` and a later reasoning step
///   restates `name` with a different value.
/// - Spatial: spatial-relation terms in the step that failed verification, or
///   in the final answer when nothing failed verification.
/// - Math: a code step that failed or printed a traceback/assertion failure.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBased;

impl RuleBased {
    fn ocr_conflict(record: &RunRecord) -> bool {
        let mut read: BTreeMap<String, String> = BTreeMap::new();
        for step in &record.trace.steps {
            match step.kind {
                StepKind::ToolResult => {
                    let perception = step.tool_name.as_deref().is_some_and(|t| PERCEPTION_TOOLS.contains(&t));
                    let ok = step.outcome.as_ref().is_none_or(|o| o.success);
                    if perception && ok {
                        read.extend(quantities(&step.text));
                    }
                }
                StepKind::Thought | StepKind::FinalAnswer | StepKind::Verification
                    if quantities(&step.text).any(|(k, v)| read.get(&k).is_some_and(|seen| *seen != v)) =>
                {
                    return true;
                }
                _ => {}
            }
        }
        false
    }

    fn spatial(record: &RunRecord) -> bool {
        let steps = &record.trace.steps;
        let flagged: Vec<&str> = steps
            .iter()
            .filter(|s| s.kind == StepKind::Verification && matches!(parse_verdict(&s.text), Verdict::Inconsistent(_)))
            .map(|s| s.text.as_str())
            .collect();
        if flagged.is_empty() {
            record.trace.final_answer().is_some_and(|s| SPATIAL.is_match(&s.text))
        } else {
            flagged.iter().any(|t| SPATIAL.is_match(t))
        }
    }

    fn math(record: &RunRecord) -> bool {
        record.trace.steps.iter().any(|s| {
            s.kind == StepKind::ToolResult
                && s.tool_name.as_deref() == Some("code")
                && (s.outcome.as_ref().is_some_and(|o| !o.success) || CODE_FAILURE.is_match(&s.text))
        })
    }
}

impl ErrorClassifier for RuleBased {
    fn name(&self) -> &str {
        "rule-based"
    }

    fn classify(&self, record: &RunRecord) -> Result<ErrorCategory, String> {
        Ok(if Self::ocr_conflict(record) {
            ErrorCategory::Ocr
        } else if Self::spatial(record) {
            ErrorCategory::Spatial
        } else if Self::math(record) {
            ErrorCategory::Math
        } else {
            ErrorCategory::Other
        })
    }
}

const JUDGE_RUBRIC: &str = "You review an incorrect visual-reasoning trace and name the root cause. \
OCR: a number or text was misread from the image. Spatial: a spatial relation or layout was misjudged. \
Math: a calculation or symbolic step went wrong. Other: anything else. \
Reply with exactly one word: OCR, Spatial, Math or Other.";

/// Asks a model to pick the category from a rubric.
pub struct ModelJudge {
    model: Arc<dyn ModelClient>,
    params: ModelParams,
}

impl ModelJudge {
    pub fn new(model: Arc<dyn ModelClient>) -> Self {
        Self { model, params: ModelParams { temperature: 0.0, max_tokens: 16, seed: 0 } }
    }

    fn render(record: &RunRecord) -> String {
        let mut out = format!("Gold answer: {}\nPredicted: {}\nStatus: {:?}\n\nTrace:\n", record.gold, record.predicted, record.status());
        for s in &record.trace.steps {
            let tool = s.tool_name.as_deref().map(|t| format!(" {t}")).unwrap_or_default();
            out.push_str(&format!("[{:?}{tool}] {}\n", s.kind, s.text));
        }
        out
    }
}

impl ErrorClassifier for ModelJudge {
    fn name(&self) -> &str {
        "model-judge"
    }

    fn classify(&self, record: &RunRecord) -> Result<ErrorCategory, String> {
        let turns = [ChatTurn::system(JUDGE_RUBRIC), ChatTurn::user(Self::render(record))];
        let reply = self.model.complete(&turns, &self.params).map_err(|e| e.to_string())?;
        let word = reply.text.split(|c: char| !c.is_ascii_alphabetic()).find(|w| !w.is_empty()).unwrap_or("");
        ErrorCategory::parse(word).ok_or_else(|| format!("unrecognized judge reply {:?}", reply.text))
    }
}

/// Shares over analyzed (incorrect or unfinished) records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCategoryDist {
    pub fractions: BTreeMap<ErrorCategory, f64>,
    pub counts: BTreeMap<ErrorCategory, u64>,
    pub n_analyzed: u64,
    /// Records whose classification failed and were filed under Other.
    pub n_classifier_failures: u64,
}

impl ErrorCategoryDist {
    pub fn fraction(&self, c: ErrorCategory) -> f64 {
        self.fractions.get(&c).copied().unwrap_or(0.0)
    }
}

/// Classifies every incorrect or unfinished record. Error records are not
/// model mistakes and are skipped.
pub fn categorize_records<'a>(
    records: impl IntoIterator<Item = &'a RunRecord>,
    classifier: &dyn ErrorClassifier,
) -> ErrorCategoryDist {
    let mut counts: BTreeMap<ErrorCategory, u64> = ErrorCategory::ALL.iter().map(|&c| (c, 0)).collect();
    let mut n_analyzed = 0;
    let mut n_classifier_failures = 0;
    for r in records {
        if super::outcome(r) == super::Outcome::Correct || super::outcome(r) == super::Outcome::Error {
            continue;
        }
        n_analyzed += 1;
        let category = classifier.classify(r).unwrap_or_else(|e| {
            warn!(item = r.item_id(), classifier = classifier.name(), error = %e, "classification failed, filing as Other");
            n_classifier_failures += 1;
            ErrorCategory::Other
        });
        *counts.entry(category).or_default() += 1;
    }
    let fractions = counts
        .iter()
        .map(|(&c, &n)| (c, if n_analyzed == 0 { 0.0 } else { n as f64 / n_analyzed as f64 }))
        .collect();
    ErrorCategoryDist { fractions, counts, n_analyzed, n_classifier_failures }
}
