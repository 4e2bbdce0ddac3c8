//! Module ablations: rerun the benchmark with single modules switched off.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci_with, AccuracySummary, BootstrapParams, Harness, HarnessError, RunLog};
use crate::agent::{AgentConfig, BenchmarkItem};

/// Everything a condition may switch off.
pub const ABLATABLE: [&str; 5] = ["ocr", "code", "caption", "vqa", "backtrace"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub label: String,
    #[serde(default)]
    pub disabled: BTreeSet<String>,
}

impl AblationConfig {
    pub fn new<S: Into<String>>(label: &str, disabled: impl IntoIterator<Item = S>) -> Self {
        Self { label: label.into(), disabled: disabled.into_iter().map(Into::into).collect() }
    }

    /// The full system followed by one column per removed module.
    pub fn standard_grid() -> Vec<Self> {
        vec![
            Self::new::<&str>("Full", []),
            Self::new("- OCR", ["ocr"]),
            Self::new("- Python", ["code"]),
            Self::new("- Caption", ["caption"]),
            Self::new("- QA", ["vqa"]),
            Self::new("- Backtrace", ["backtrace"]),
        ]
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match self.disabled.iter().find(|d| !ABLATABLE.contains(&d.as_str())) {
            Some(d) => Err(HarnessError::InvalidAblation {
                label: self.label.clone(),
                message: format!("unknown module {d:?}"),
            }),
            None => Ok(()),
        }
    }

    pub fn apply(&self, base: &AgentConfig) -> AgentConfig {
        let mut c = base.clone();
        c.enabled_tools.retain(|t| !self.disabled.contains(t));
        if self.disabled.contains("backtrace") {
            c.backtrace_enabled = false;
        }
        c
    }

    /// Post-run check that nothing disabled shows up in any trace.
    pub fn check_gating(&self, logs: &[RunLog]) -> Result<(), HarnessError> {
        for r in logs.iter().flat_map(|l| &l.records) {
            let used = r.trace.tools_used();
            if let Some(tool) = self.disabled.iter().find(|d| used.contains(d.as_str())) {
                return Err(self.violation(tool, r.item_id()));
            }
            if self.disabled.contains("backtrace") && !r.trace.backtracks.is_empty() {
                return Err(self.violation("backtrace", r.item_id()));
            }
        }
        Ok(())
    }

    fn violation(&self, module: &str, item: &str) -> HarnessError {
        HarnessError::GatingViolation { label: self.label.clone(), module: module.into(), item: item.into() }
    }
}

fn check_labels(grid: &[AblationConfig]) -> Result<(), HarnessError> {
    let mut seen = BTreeSet::new();
    for c in grid {
        c.validate()?;
        if !seen.insert(c.label.as_str()) {
            return Err(HarnessError::DuplicateLabel(c.label.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub summary: AccuracySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub cells: Vec<AblationCell>,
}

impl AblationRow {
    /// Accuracy in percent with one decimal, one entry per column.
    pub fn rendered(&self) -> Vec<String> {
        self.cells.iter().map(|c| format!("{:.1}", c.summary.mean_accuracy * 100.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub labels: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, dataset: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.dataset == dataset)
    }
}

pub struct AblationRun {
    pub table: AblationTable,
    /// Raw logs per condition, in grid order.
    pub logs: Vec<(AblationConfig, Vec<RunLog>)>,
}

/// Builds the table from finished logs. Columns follow the grid order; rows
/// follow the order datasets first appear in the `Full`-most (first) condition.
pub fn summarize_ablation(
    conditions: &[(AblationConfig, Vec<RunLog>)],
    params: &BootstrapParams,
) -> Result<AblationTable, HarnessError> {
    let grid: Vec<AblationConfig> = conditions.iter().map(|(c, _)| c.clone()).collect();
    check_labels(&grid)?;
    let mut datasets: Vec<&str> = Vec::new();
    for log in conditions.iter().flat_map(|(_, logs)| logs) {
        if !datasets.contains(&log.dataset.as_str()) {
            datasets.push(&log.dataset);
        }
    }
    let mut rows = Vec::with_capacity(datasets.len());
    for dataset in datasets {
        let mut cells = Vec::with_capacity(conditions.len());
        for (cond, logs) in conditions {
            cond.check_gating(logs)?;
            let subset: Vec<RunLog> = logs.iter().filter(|l| l.dataset == dataset).cloned().collect();
            cells.push(AblationCell { label: cond.label.clone(), summary: bootstrap_ci_with(&subset, params)? });
        }
        rows.push(AblationRow { dataset: dataset.to_string(), cells });
    }
    Ok(AblationTable { labels: grid.into_iter().map(|c| c.label).collect(), rows })
}

pub fn run_ablation(
    harness: &Harness<'_>,
    items: &[BenchmarkItem],
    base: &AgentConfig,
    grid: &[AblationConfig],
    seeds: &[u64],
    params: &BootstrapParams,
) -> Result<AblationRun, HarnessError> {
    check_labels(grid)?;
    let mut conditions = Vec::with_capacity(grid.len());
    for cond in grid {
        let logs = harness.run_benchmark(items, &cond.apply(base), seeds)?;
        cond.check_gating(&logs)?;
        conditions.push((cond.clone(), logs));
    }
    let table = summarize_ablation(&conditions, params)?;
    Ok(AblationRun { table, logs: conditions })
}

/// Plain-text table, one row per dataset.
pub fn render_ablation(table: &AblationTable) -> String {
    let mut out = String::from("Dataset");
    for l in &table.labels {
        out.push_str(" | ");
        out.push_str(l);
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.dataset);
        for v in row.rendered() {
            out.push_str(" | ");
            out.push_str(&v);
        }
        out.push('\n');
    }
    out
}
