//! Benchmark execution: datasets in, scored run logs out.
//!
//! Items run on a bounded rayon pool, one whole item per worker. Records are
//! sorted by item id afterwards so the pool size never shows in the output.

mod ablation;
mod bootstrap;
pub mod dataset;
mod provider;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::agent::{Agent, AgentConfig, AgentError, BenchmarkItem, RunRecord, TraceStatus};
use crate::model::ModelClient;
use crate::tools::ToolRegistry;

pub use ablation::{
    render_ablation, run_ablation, summarize_ablation, AblationCell, AblationConfig, AblationRow, AblationRun,
    AblationTable, ABLATABLE,
};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_with, percentile, AccuracySummary, BootstrapParams};
pub use dataset::{group_records, load_dataset, read_records, write_records};
pub use provider::{Script, ScriptedProvider, SharedProvider};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("no seeds given")]
    NoSeeds,
    #[error("log is empty")]
    EmptyLog,
    #[error("logs cover different item sets")]
    ItemSetMismatch,
    #[error("duplicate item id {0:?} in log")]
    DuplicateRecord(String),
    #[error("duplicate ablation label {0:?}")]
    DuplicateLabel(String),
    #[error("ablation {label:?}: {message}")]
    InvalidAblation { label: String, message: String },
    #[error("ablation {label:?}: disabled module {module:?} used in item {item:?}")]
    GatingViolation { label: String, module: String, item: String },
    #[error("invalid bootstrap parameters: {0}")]
    Bootstrap(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// All records for one dataset under one seed, sorted by item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub dataset: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub records: Vec<RunRecord>,
}

impl RunLog {
    /// Sorts by item id and rejects duplicates. The fingerprint is taken from
    /// the first record.
    pub fn new(dataset: String, seed: u64, mut records: Vec<RunRecord>) -> Result<Self, HarnessError> {
        records.sort_by(|a, b| a.item_id().cmp(b.item_id()));
        if let Some(w) = records.windows(2).find(|w| w[0].item_id() == w[1].item_id()) {
            return Err(HarnessError::DuplicateRecord(w[0].item_id().to_string()));
        }
        let config_fingerprint = records.first().map(|r| r.config_fingerprint.clone()).unwrap_or_default();
        Ok(Self { dataset, seed, config_fingerprint, records })
    }

    /// Union of two logs of the same dataset and seed. Associative and
    /// commutative because records are re-sorted and ids must not collide.
    pub fn merge(self, other: RunLog) -> Result<RunLog, HarnessError> {
        let mut records = self.records;
        records.extend(other.records);
        RunLog::new(self.dataset, self.seed, records)
    }

    pub fn item_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.item_id()).collect()
    }

    pub fn n_errors(&self) -> usize {
        self.records.iter().filter(|r| r.status() == TraceStatus::Error).count()
    }
}

/// Fraction correct among non-Error records. Unfinished records and empty
/// predictions count as incorrect.
pub fn score(log: &RunLog) -> Result<f64, HarnessError> {
    let scored = log.records.iter().filter(|r| r.status() != TraceStatus::Error);
    let (n, correct) = scored.fold((0usize, 0usize), |(n, c), r| (n + 1, c + usize::from(is_correct(r))));
    if n == 0 {
        return Err(HarnessError::EmptyLog);
    }
    Ok(correct as f64 / n as f64)
}

pub(crate) fn is_correct(r: &RunRecord) -> bool {
    r.correct && r.status() == TraceStatus::Completed && !r.predicted.trim().is_empty()
}

/// Models for one item. A fresh session per item keeps scripted queues
/// and any per-item state out of other workers' way.
pub struct Session {
    pub model: Box<dyn ModelClient>,
    /// Falls back to `model` when absent.
    pub verifier: Option<Box<dyn ModelClient>>,
}

pub trait ModelProvider: Send + Sync {
    fn session(&self, item: &BenchmarkItem, seed: u64) -> Result<Session, String>;
}

pub struct Harness<'a> {
    pub provider: &'a dyn ModelProvider,
    pub tools: &'a ToolRegistry,
    pub parallelism: usize,
}

impl Harness<'_> {
    /// One log per `(dataset, seed)`, ordered by seed then dataset.
    pub fn run_benchmark(
        &self,
        items: &[BenchmarkItem],
        config: &AgentConfig,
        seeds: &[u64],
    ) -> Result<Vec<RunLog>, HarnessError> {
        if seeds.is_empty() {
            return Err(HarnessError::NoSeeds);
        }
        // Validate once up front; a broken config is not a per-item failure.
        Agent::new(config, self.tools)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism.max(1))
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?;

        let mut logs = Vec::new();
        for &seed in seeds {
            let seeded = config.with_seed(seed);
            let agent = Agent::new(&seeded, self.tools)?;
            let fingerprint = agent.fingerprint();
            let records: Vec<RunRecord> =
                pool.install(|| items.par_iter().map(|item| self.run_one(&agent, &fingerprint, item, seed)).collect());
            logs.extend(group_records(records)?);
        }
        Ok(logs)
    }

    fn run_one(&self, agent: &Agent<'_>, fingerprint: &str, item: &BenchmarkItem, seed: u64) -> RunRecord {
        let session = match self.provider.session(item, seed) {
            Ok(s) => s,
            Err(e) => return RunRecord::failed(item, seed, fingerprint, e),
        };
        let verifier = session.verifier.as_deref().unwrap_or(session.model.as_ref());
        let run = catch_unwind(AssertUnwindSafe(|| agent.run_item_with_verifier(item, session.model.as_ref(), verifier)));
        match run {
            Ok(Ok(record)) => record,
            Ok(Err(e)) => RunRecord::failed(item, seed, fingerprint, e.to_string()),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                warn!(item = %item.id, %msg, "item crashed");
                RunRecord::failed(item, seed, fingerprint, format!("crashed: {msg}"))
            }
        }
    }
}
