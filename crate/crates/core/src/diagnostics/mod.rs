//! Post-hoc analysis of run logs: accuracy by token range, token histograms,
//! error categories and condition-vs-condition deltas.
//!
//! Every function here is pure over the records it is given.

mod classify;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Difficulty, RunRecord, TraceStatus};
use crate::harness::RunLog;

pub use classify::{categorize_records, ErrorCategory, ErrorCategoryDist, ErrorClassifier, ModelJudge, RuleBased};

pub const DEFAULT_BUCKET_WIDTH: u64 = 250;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiagnosticsError {
    #[error("bucket width must be positive")]
    ZeroWidth,
    #[error("reports cover different datasets: {a:?} vs {b:?}")]
    DatasetMismatch { a: Vec<String>, b: Vec<String> },
    #[error("reports use different bucket widths: {0} vs {1}")]
    WidthMismatch(u64, u64),
}

/// The four mutually exclusive classes a record falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Correct,
    Incorrect,
    Unfinished,
    Error,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Self::Correct, Self::Incorrect, Self::Unfinished, Self::Error];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Correct => "correct",
            Self::Incorrect => "incorrect",
            Self::Unfinished => "unfinished",
            Self::Error => "error",
        }
    }
}

pub fn outcome(r: &RunRecord) -> Outcome {
    match r.status() {
        TraceStatus::Error => Outcome::Error,
        TraceStatus::Unfinished => Outcome::Unfinished,
        TraceStatus::Completed if crate::harness::is_correct(r) => Outcome::Correct,
        TraceStatus::Completed => Outcome::Incorrect,
    }
}

fn bucket_of(tokens: u64, width: u64) -> usize {
    (tokens / width) as usize
}

/// Counts for `[bucket_lo, bucket_hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBucketStats {
    pub bucket_lo: u64,
    pub bucket_hi: u64,
    pub n_correct: u64,
    /// Completed but wrong. Unfinished records are counted separately.
    pub n_incorrect: u64,
    pub n_unfinished: u64,
    /// Excluded from `accuracy_ratio`.
    pub n_error: u64,
    /// Absent when the bucket holds no scored record.
    pub accuracy_ratio: Option<f64>,
}

impl TokenBucketStats {
    pub fn total(&self) -> u64 {
        self.n_correct + self.n_incorrect + self.n_unfinished + self.n_error
    }
}

/// Buckets `[i*width, (i+1)*width)` from zero up to the bucket holding the
/// largest token count. Empty input gives no buckets.
pub fn bucket_records<'a>(
    records: impl IntoIterator<Item = &'a RunRecord>,
    width: u64,
) -> Result<Vec<TokenBucketStats>, DiagnosticsError> {
    if width == 0 {
        return Err(DiagnosticsError::ZeroWidth);
    }
    let mut buckets: Vec<TokenBucketStats> = Vec::new();
    for r in records {
        let i = bucket_of(r.total_tokens(), width);
        while buckets.len() <= i {
            let lo = buckets.len() as u64 * width;
            buckets.push(TokenBucketStats {
                bucket_lo: lo,
                bucket_hi: lo + width,
                n_correct: 0,
                n_incorrect: 0,
                n_unfinished: 0,
                n_error: 0,
                accuracy_ratio: None,
            });
        }
        let b = &mut buckets[i];
        match outcome(r) {
            Outcome::Correct => b.n_correct += 1,
            Outcome::Incorrect => b.n_incorrect += 1,
            Outcome::Unfinished => b.n_unfinished += 1,
            Outcome::Error => b.n_error += 1,
        }
    }
    for b in &mut buckets {
        let scored = b.n_correct + b.n_incorrect + b.n_unfinished;
        b.accuracy_ratio = (scored > 0).then(|| b.n_correct as f64 / scored as f64);
    }
    Ok(buckets)
}

pub fn bucket_by_tokens(log: &RunLog, width: u64) -> Result<Vec<TokenBucketStats>, DiagnosticsError> {
    bucket_records(&log.records, width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramBy {
    Correctness,
    Difficulty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub label: String,
    /// Count per bin; bins are shared by every series of the set.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn mass(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// First bin with the highest count, if any bin is non-empty.
    pub fn mode_bin(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        (max > 0).then(|| self.counts.iter().position(|&c| c == max).unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSet {
    pub by: HistogramBy,
    pub bin_width: u64,
    pub exclude_unfinished: bool,
    pub series: Vec<Histogram>,
}

impl HistogramSet {
    pub fn n_bins(&self) -> usize {
        self.series.first().map_or(0, |s| s.counts.len())
    }

    pub fn get(&self, label: &str) -> Option<&Histogram> {
        self.series.iter().find(|s| s.label == label)
    }

    pub fn mass(&self) -> u64 {
        self.series.iter().map(Histogram::mass).sum()
    }
}

/// Token-count histograms whose series partition the included records.
/// By correctness the series are `correct`, `incorrect`, `unfinished` and
/// `error`; by difficulty they are `<difficulty>/<outcome>` for each
/// difficulty present. `exclude_unfinished` drops unfinished records and
/// their series.
pub fn histogram_records<'a>(
    records: impl IntoIterator<Item = &'a RunRecord>,
    by: HistogramBy,
    width: u64,
    exclude_unfinished: bool,
) -> Result<HistogramSet, DiagnosticsError> {
    if width == 0 {
        return Err(DiagnosticsError::ZeroWidth);
    }
    let included: Vec<&RunRecord> =
        records.into_iter().filter(|r| !(exclude_unfinished && outcome(r) == Outcome::Unfinished)).collect();
    let n_bins = included.iter().map(|r| bucket_of(r.total_tokens(), width) + 1).max().unwrap_or(0);
    let outcomes: Vec<Outcome> =
        Outcome::ALL.into_iter().filter(|o| !(exclude_unfinished && *o == Outcome::Unfinished)).collect();
    let labels: Vec<String> = match by {
        HistogramBy::Correctness => outcomes.iter().map(|o| o.as_str().to_string()).collect(),
        HistogramBy::Difficulty => {
            let present: BTreeSet<Difficulty> = included.iter().map(|r| r.difficulty).collect();
            Difficulty::ALL
                .into_iter()
                .filter(|d| present.contains(d))
                .flat_map(|d| outcomes.iter().map(move |o| format!("{}/{}", d.as_str(), o.as_str())))
                .collect()
        }
    };
    let mut series: Vec<Histogram> = labels.into_iter().map(|label| Histogram { label, counts: vec![0; n_bins] }).collect();
    for r in included {
        let label = match by {
            HistogramBy::Correctness => outcome(r).as_str().to_string(),
            HistogramBy::Difficulty => format!("{}/{}", r.difficulty.as_str(), outcome(r).as_str()),
        };
        let s = series.iter_mut().find(|s| s.label == label).expect("label derived from the same records");
        s.counts[bucket_of(r.total_tokens(), width)] += 1;
    }
    Ok(HistogramSet { by, bin_width: width, exclude_unfinished, series })
}

pub fn token_histograms(
    log: &RunLog,
    by: HistogramBy,
    width: u64,
    exclude_unfinished: bool,
) -> Result<HistogramSet, DiagnosticsError> {
    histogram_records(&log.records, by, width, exclude_unfinished)
}

pub fn categorize_errors(log: &RunLog, classifier: &dyn ErrorClassifier) -> ErrorCategoryDist {
    categorize_records(&log.records, classifier)
}

/// Everything computed for one dataset, pooled over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDiagnostics {
    pub dataset: String,
    pub n_records: u64,
    pub n_correct: u64,
    pub n_incorrect: u64,
    pub n_unfinished: u64,
    pub n_error: u64,
    /// Correct over non-Error records; absent when there are none.
    pub accuracy: Option<f64>,
    pub mean_tokens_correct: Option<f64>,
    pub mean_tokens_incorrect: Option<f64>,
    pub buckets: Vec<TokenBucketStats>,
    pub histogram_correctness: HistogramSet,
    /// Same as above without unfinished records.
    pub histogram_finished: HistogramSet,
    pub histogram_difficulty: HistogramSet,
    pub errors: ErrorCategoryDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub bucket_width: u64,
    pub classifier: String,
    pub config_fingerprints: Vec<String>,
    pub seeds: Vec<u64>,
    pub datasets: Vec<DatasetDiagnostics>,
}

impl DiagnosticsReport {
    pub fn dataset(&self, name: &str) -> Option<&DatasetDiagnostics> {
        self.datasets.iter().find(|d| d.dataset == name)
    }

    pub fn n_records(&self) -> u64 {
        self.datasets.iter().map(|d| d.n_records).sum()
    }

    /// Cross-checks every statistic against the per-dataset counts.
    pub fn check_invariants(&self) -> Result<(), String> {
        for d in &self.datasets {
            let name = &d.dataset;
            if d.n_correct + d.n_incorrect + d.n_unfinished + d.n_error != d.n_records {
                return Err(format!("{name}: outcome counts do not sum to n_records"));
            }
            let sum = |f: fn(&TokenBucketStats) -> u64| d.buckets.iter().map(f).sum::<u64>();
            if sum(|b| b.n_correct) != d.n_correct
                || sum(|b| b.n_incorrect) != d.n_incorrect
                || sum(|b| b.n_unfinished) != d.n_unfinished
                || sum(|b| b.n_error) != d.n_error
            {
                return Err(format!("{name}: bucket counts disagree with totals"));
            }
            for (i, b) in d.buckets.iter().enumerate() {
                if b.bucket_lo != i as u64 * self.bucket_width || b.bucket_hi != b.bucket_lo + self.bucket_width {
                    return Err(format!("{name}: bucket {i} does not tile the token axis"));
                }
                let scored = b.n_correct + b.n_incorrect + b.n_unfinished;
                let expect = (scored > 0).then(|| b.n_correct as f64 / scored as f64);
                if b.accuracy_ratio != expect {
                    return Err(format!("{name}: bucket {i} accuracy does not count unfinished as incorrect"));
                }
            }
            if d.histogram_correctness.mass() != d.n_records {
                return Err(format!("{name}: correctness histogram does not partition the records"));
            }
            if d.histogram_finished.mass() != d.n_records - d.n_unfinished {
                return Err(format!("{name}: finished histogram mass is wrong"));
            }
            if d.histogram_difficulty.mass() != d.n_records {
                return Err(format!("{name}: difficulty histogram does not partition the records"));
            }
            if d.errors.n_analyzed != d.n_incorrect + d.n_unfinished {
                return Err(format!("{name}: error analysis does not cover exactly the wrong answers"));
            }
            let scored = d.n_records - d.n_error;
            let expect = (scored > 0).then(|| d.n_correct as f64 / scored as f64);
            if d.accuracy != expect {
                return Err(format!("{name}: accuracy disagrees with counts"));
            }
        }
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = u64>) -> Option<f64> {
    let (n, sum) = values.fold((0u64, 0u64), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| sum as f64 / n as f64)
}

/// Pools all logs per dataset (across seeds) and computes every statistic.
pub fn analyze(
    logs: &[RunLog],
    bucket_width: u64,
    classifier: &dyn ErrorClassifier,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    if bucket_width == 0 {
        return Err(DiagnosticsError::ZeroWidth);
    }
    let mut by_dataset: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for log in logs {
        by_dataset.entry(&log.dataset).or_default().extend(&log.records);
    }
    let mut datasets = Vec::with_capacity(by_dataset.len());
    for (name, records) in by_dataset {
        let count = |o: Outcome| records.iter().filter(|r| outcome(r) == o).count() as u64;
        let (n_correct, n_incorrect, n_unfinished, n_error) =
            (count(Outcome::Correct), count(Outcome::Incorrect), count(Outcome::Unfinished), count(Outcome::Error));
        let n_records = records.len() as u64;
        let scored = n_records - n_error;
        let tokens_of = |o: Outcome| records.iter().filter(move |r| outcome(r) == o).map(|r| r.total_tokens());
        datasets.push(DatasetDiagnostics {
            dataset: name.to_string(),
            n_records,
            n_correct,
            n_incorrect,
            n_unfinished,
            n_error,
            accuracy: (scored > 0).then(|| n_correct as f64 / scored as f64),
            mean_tokens_correct: mean(tokens_of(Outcome::Correct)),
            mean_tokens_incorrect: mean(tokens_of(Outcome::Incorrect).chain(tokens_of(Outcome::Unfinished))),
            buckets: bucket_records(records.iter().copied(), bucket_width)?,
            histogram_correctness: histogram_records(records.iter().copied(), HistogramBy::Correctness, bucket_width, false)?,
            histogram_finished: histogram_records(records.iter().copied(), HistogramBy::Correctness, bucket_width, true)?,
            histogram_difficulty: histogram_records(records.iter().copied(), HistogramBy::Difficulty, bucket_width, false)?,
            errors: categorize_records(records.iter().copied(), classifier),
        });
    }
    let config_fingerprints: BTreeSet<String> =
        logs.iter().flat_map(|l| &l.records).map(|r| r.config_fingerprint.clone()).collect();
    let seeds: BTreeSet<u64> = logs.iter().map(|l| l.seed).collect();
    Ok(DiagnosticsReport {
        bucket_width,
        classifier: classifier.name().to_string(),
        config_fingerprints: config_fingerprints.into_iter().collect(),
        seeds: seeds.into_iter().collect(),
        datasets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDelta {
    pub bucket_lo: u64,
    pub bucket_hi: u64,
    /// `b - a` in record counts.
    pub d_correct: i64,
    pub d_incorrect: i64,
    pub d_unfinished: i64,
    /// Present only when both sides have an accuracy for the bucket.
    pub d_accuracy_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDelta {
    pub dataset: String,
    pub d_accuracy: Option<f64>,
    pub d_category: BTreeMap<ErrorCategory, f64>,
    pub buckets: Vec<BucketDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub bucket_width: u64,
    pub datasets: Vec<DatasetDelta>,
}

impl DeltaTable {
    pub fn dataset(&self, name: &str) -> Option<&DatasetDelta> {
        self.datasets.iter().find(|d| d.dataset == name)
    }
}

/// Signed differences `b - a` per dataset, error category and token bucket.
pub fn compare_conditions(a: &DiagnosticsReport, b: &DiagnosticsReport) -> Result<DeltaTable, DiagnosticsError> {
    let names = |r: &DiagnosticsReport| r.datasets.iter().map(|d| d.dataset.clone()).collect::<Vec<_>>();
    if names(a) != names(b) {
        return Err(DiagnosticsError::DatasetMismatch { a: names(a), b: names(b) });
    }
    if a.bucket_width != b.bucket_width {
        return Err(DiagnosticsError::WidthMismatch(a.bucket_width, b.bucket_width));
    }
    let width = a.bucket_width;
    let datasets = a
        .datasets
        .iter()
        .zip(&b.datasets)
        .map(|(da, db)| {
            let d_category =
                ErrorCategory::ALL.iter().map(|&c| (c, db.errors.fraction(c) - da.errors.fraction(c))).collect();
            let n = da.buckets.len().max(db.buckets.len());
            let buckets = (0..n)
                .map(|i| {
                    let (ba, bb) = (da.buckets.get(i), db.buckets.get(i));
                    let get = |b: Option<&TokenBucketStats>, f: fn(&TokenBucketStats) -> u64| b.map_or(0, f) as i64;
                    BucketDelta {
                        bucket_lo: i as u64 * width,
                        bucket_hi: (i as u64 + 1) * width,
                        d_correct: get(bb, |s| s.n_correct) - get(ba, |s| s.n_correct),
                        d_incorrect: get(bb, |s| s.n_incorrect) - get(ba, |s| s.n_incorrect),
                        d_unfinished: get(bb, |s| s.n_unfinished) - get(ba, |s| s.n_unfinished),
                        d_accuracy_ratio: match (ba.and_then(|s| s.accuracy_ratio), bb.and_then(|s| s.accuracy_ratio)) {
                            (Some(x), Some(y)) => Some(y - x),
                            _ => None,
                        },
                    }
                })
                .collect();
            DatasetDelta {
                dataset: da.dataset.clone(),
                d_accuracy: da.accuracy.zip(db.accuracy).map(|(x, y)| y - x),
                d_category,
                buckets,
            }
        })
        .collect();
    Ok(DeltaTable { bucket_width: width, datasets })
}
