use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::ModelParams;
use crate::tools::TOOL_NAMES;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    #[default]
    Unknown,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard, Difficulty::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Medium => "Medium",
            Difficulty::Hard => "Hard",
            Difficulty::Unknown => "Unknown",
        }
    }
}

/// One benchmark question. Field names on the wire follow the dataset JSONL
/// schema (`image`, `answer`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub dataset: String,
    pub question: String,
    #[serde(rename = "image")]
    pub image_ref: String,
    /// Ordered `(label, text)` pairs for multiple-choice items.
    #[serde(default)]
    pub choices: Option<Vec<(String, String)>>,
    #[serde(rename = "answer")]
    pub gold_answer: String,
    #[serde(default)]
    pub difficulty: Difficulty,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id is empty".into());
        }
        if self.image_ref.trim().is_empty() {
            return Err(format!("item {}: image reference is empty", self.id));
        }
        if let Some(choices) = &self.choices {
            if choices.is_empty() {
                return Err(format!("item {}: choices list is empty", self.id));
            }
            let labels: BTreeSet<String> = choices.iter().map(|(l, _)| l.to_ascii_uppercase()).collect();
            if labels.len() != choices.len() {
                return Err(format!("item {}: duplicate choice labels", self.id));
            }
            if !labels.contains(&self.gold_answer.trim().to_ascii_uppercase()) {
                return Err(format!("item {}: answer {:?} is not a choice label", self.id, self.gold_answer));
            }
        }
        Ok(())
    }

    pub fn is_multiple_choice(&self) -> bool {
        self.choices.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    Thought,
    ToolCall,
    ToolResult,
    Verification,
    FinalAnswer,
    BacktrackMarker,
}

/// Execution metadata attached to `ToolResult` steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolOutcome {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub duration_ms: u64,
    pub token_cost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub index: usize,
    pub kind: StepKind,
    pub text: String,
    pub token_count: u64,
    /// `token_count` is the character approximation, not endpoint usage.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approx: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_args: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ToolOutcome>,
    /// Removed from the active context by a backtrack. Tokens still count.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub discarded: bool,
}

impl ReasoningStep {
    pub fn new(kind: StepKind, text: impl Into<String>, token_count: u64) -> Self {
        Self {
            index: 0,
            kind,
            text: text.into(),
            token_count,
            approx: false,
            tool_name: None,
            tool_args: None,
            outcome: None,
            discarded: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceStatus {
    Completed,
    Unfinished,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktrackEvent {
    pub from_step: usize,
    pub to_checkpoint: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub item_id: String,
    pub status: TraceStatus,
    pub total_tokens: u64,
    pub steps: Vec<ReasoningStep>,
    pub backtracks: Vec<BacktrackEvent>,
    pub wall_time_ms: u64,
}

impl ReasoningTrace {
    pub fn final_answer(&self) -> Option<&ReasoningStep> {
        self.steps.iter().find(|s| s.kind == StepKind::FinalAnswer)
    }

    /// Names of every tool that appears in a call or result step.
    pub fn tools_used(&self) -> BTreeSet<&str> {
        self.steps.iter().filter_map(|s| s.tool_name.as_deref()).collect()
    }

    pub fn discarded_tokens(&self) -> u64 {
        self.steps.iter().filter(|s| s.discarded).map(|s| s.token_count).sum()
    }

    /// Checks the structural invariants of a finished trace.
    pub fn check_invariants(&self, budget: &TokenBudget, max_backtracks: u32) -> Result<(), String> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.index != i {
                return Err(format!("step {i} carries index {}", s.index));
            }
            let has_tool = matches!(s.kind, StepKind::ToolCall | StepKind::ToolResult);
            if has_tool != s.tool_name.is_some() {
                return Err(format!("step {i}: tool_name presence does not match kind {:?}", s.kind));
            }
        }
        let sum: u64 = self.steps.iter().map(|s| s.token_count).sum();
        if sum != self.total_tokens {
            return Err(format!("total_tokens {} != step sum {sum}", self.total_tokens));
        }
        let finals: Vec<_> = self.steps.iter().filter(|s| s.kind == StepKind::FinalAnswer).collect();
        if finals.len() > 1 {
            return Err("more than one final answer".into());
        }
        if !finals.is_empty() && self.steps.last().map(|s| s.kind) != Some(StepKind::FinalAnswer) {
            return Err("final answer is not the last step".into());
        }
        let unfinished = self.total_tokens >= budget.hard_cutoff && finals.is_empty();
        if unfinished != (self.status == TraceStatus::Unfinished) {
            return Err(format!("status {:?} inconsistent with {} tokens", self.status, self.total_tokens));
        }
        let mut open: Option<&str> = None;
        for s in &self.steps {
            match s.kind {
                StepKind::ToolCall => {
                    if open.is_some() {
                        return Err(format!("step {}: tool call while another is unresolved", s.index));
                    }
                    open = s.tool_name.as_deref();
                }
                StepKind::ToolResult => {
                    if open != s.tool_name.as_deref() || open.is_none() {
                        return Err(format!("step {}: tool result without matching call", s.index));
                    }
                    open = None;
                }
                _ if open.is_some() => return Err(format!("step {}: tool call left unresolved", s.index)),
                _ => {}
            }
        }
        if open.is_some() {
            return Err("trace ends with an unresolved tool call".into());
        }
        if self.backtracks.len() > max_backtracks as usize {
            return Err(format!("{} backtracks exceed the limit {max_backtracks}", self.backtracks.len()));
        }
        Ok(())
    }
}

/// Token thresholds: past `soft_warn` the model is asked to be brief, at
/// `hard_cutoff` the trace is truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub soft_warn: u64,
    pub hard_cutoff: u64,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self { soft_warn: 2000, hard_cutoff: 4000 }
    }
}

impl TokenBudget {
    pub fn new(soft_warn: u64, hard_cutoff: u64) -> Result<Self, String> {
        let b = Self { soft_warn, hard_cutoff };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.soft_warn == 0 || self.soft_warn >= self.hard_cutoff {
            return Err(format!(
                "budget requires 0 < soft_warn < hard_cutoff, got {} / {}",
                self.soft_warn, self.hard_cutoff
            ));
        }
        Ok(())
    }
}

/// How `wall_time_ms` is measured. `Accounted` sums backend-reported
/// latencies, which keeps scripted runs byte-reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    #[default]
    Wall,
    Accounted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub enabled_tools: BTreeSet<String>,
    pub backtrace_enabled: bool,
    /// Self-check after each successful tool result.
    pub verify_enabled: bool,
    pub max_backtracks: u32,
    pub budget: TokenBudget,
    pub reasoning_mode: String,
    pub model_params: ModelParams,
    /// Hard stop on model turns, independent of tokens.
    pub max_turns: u32,
    #[serde(default)]
    pub timing: Timing,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            enabled_tools: TOOL_NAMES.iter().map(|s| s.to_string()).collect(),
            backtrace_enabled: true,
            verify_enabled: true,
            max_backtracks: 3,
            budget: TokenBudget::default(),
            reasoning_mode: "qwq".into(),
            model_params: ModelParams::default(),
            max_turns: 64,
            timing: Timing::Wall,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.budget.validate()?;
        if self.model_params.max_tokens == 0 {
            return Err("model max_tokens must be positive".into());
        }
        if self.max_turns == 0 {
            return Err("max_turns must be positive".into());
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.model_params.seed = seed;
        c
    }
}

/// A finished run of one item: the trace plus scoring. Serialized as one
/// JSONL line per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub trace: ReasoningTrace,
    pub dataset: String,
    pub difficulty: Difficulty,
    pub seed: u64,
    pub config_fingerprint: String,
    pub predicted: String,
    pub gold: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approx_tokens: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    /// Record for an item that never reached the agent loop.
    pub fn failed(item: &BenchmarkItem, seed: u64, fingerprint: &str, error: impl Into<String>) -> Self {
        Self {
            trace: ReasoningTrace {
                item_id: item.id.clone(),
                status: TraceStatus::Error,
                total_tokens: 0,
                steps: Vec::new(),
                backtracks: Vec::new(),
                wall_time_ms: 0,
            },
            dataset: item.dataset.clone(),
            difficulty: item.difficulty,
            seed,
            config_fingerprint: fingerprint.to_string(),
            predicted: String::new(),
            gold: item.gold_answer.clone(),
            correct: false,
            approx_tokens: false,
            error: Some(error.into()),
        }
    }

    /// Minimal record with all tokens on one closing step. For building
    /// logs without running the agent.
    pub fn synthetic(item_id: &str, dataset: &str, status: TraceStatus, correct: bool, total_tokens: u64) -> Self {
        let step = match status {
            TraceStatus::Completed => Some(ReasoningStep::new(StepKind::FinalAnswer, "FINAL ANSWER: x", total_tokens)),
            TraceStatus::Unfinished => Some(ReasoningStep::new(StepKind::Thought, "…", total_tokens)),
            TraceStatus::Error => None,
        };
        let correct = correct && status == TraceStatus::Completed;
        Self {
            trace: ReasoningTrace {
                item_id: item_id.into(),
                status,
                total_tokens: if step.is_some() { total_tokens } else { 0 },
                steps: step.into_iter().collect(),
                backtracks: Vec::new(),
                wall_time_ms: 0,
            },
            dataset: dataset.into(),
            difficulty: Difficulty::Unknown,
            seed: 0,
            config_fingerprint: String::new(),
            predicted: if status == TraceStatus::Completed { "x".into() } else { String::new() },
            gold: if correct { "x".into() } else { "y".into() },
            correct,
            approx_tokens: false,
            error: (status == TraceStatus::Error).then(|| "synthetic failure".into()),
        }
    }

    pub fn item_id(&self) -> &str {
        &self.trace.item_id
    }

    pub fn status(&self) -> TraceStatus {
        self.trace.status
    }

    pub fn total_tokens(&self) -> u64 {
        self.trace.total_tokens
    }
}
