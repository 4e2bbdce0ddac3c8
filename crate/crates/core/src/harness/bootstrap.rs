//! Item-level percentile bootstrap.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{is_correct, HarnessError, RunLog};
use crate::agent::TraceStatus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParams {
    pub n_resamples: usize,
    pub level: f64,
    /// Seed for the resampling stream, independent of the run seeds.
    pub rng_seed: u64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self { n_resamples: 10_000, level: 0.95, rng_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub mean_accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Items with at least one non-Error record.
    pub n_items: usize,
    pub n_seeds: usize,
    pub n_resamples: usize,
    /// Error records across all seeds, excluded from the accuracy.
    pub n_errors: usize,
}

/// Linear interpolation between closest ranks on sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn bootstrap_ci(logs: &[RunLog], n_resamples: usize, level: f64) -> Result<AccuracySummary, HarnessError> {
    bootstrap_ci_with(logs, &BootstrapParams { n_resamples, level, ..BootstrapParams::default() })
}

/// Resamples items with replacement; each item contributes its correctness
/// averaged over seeds.
pub fn bootstrap_ci_with(logs: &[RunLog], params: &BootstrapParams) -> Result<AccuracySummary, HarnessError> {
    if params.n_resamples == 0 {
        return Err(HarnessError::Bootstrap("n_resamples must be positive".into()));
    }
    if !(params.level > 0.0 && params.level < 1.0) {
        return Err(HarnessError::Bootstrap(format!("level {} outside (0, 1)", params.level)));
    }
    let first = logs.first().ok_or(HarnessError::EmptyLog)?;
    let ids = first.item_ids();
    if logs.iter().any(|l| l.item_ids() != ids) {
        return Err(HarnessError::ItemSetMismatch);
    }

    let mut per_item: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    let mut n_errors = 0;
    for r in logs.iter().flat_map(|l| &l.records) {
        if r.status() == TraceStatus::Error {
            n_errors += 1;
            continue;
        }
        let e = per_item.entry(r.item_id()).or_default();
        e.0 += u32::from(is_correct(r));
        e.1 += 1;
    }
    let scores: Vec<f64> = per_item.values().map(|&(c, n)| c as f64 / n as f64).collect();
    if scores.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut means: Vec<f64> = (0..params.n_resamples)
        .map(|_| (0..n).map(|_| scores[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - params.level) / 2.0;
    // The percentile interval can exclude the point estimate on tiny or
    // heavily skewed samples; widen it to keep low <= mean <= high.
    let ci_low = percentile(&means, alpha).min(mean);
    let ci_high = percentile(&means, 1.0 - alpha).max(mean);

    Ok(AccuracySummary {
        mean_accuracy: mean,
        ci_low,
        ci_high,
        n_items: n,
        n_seeds: logs.len(),
        n_resamples: params.n_resamples,
        n_errors,
    })
}
