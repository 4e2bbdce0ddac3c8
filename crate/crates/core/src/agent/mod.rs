//! The stepwise reasoning loop.
//!
//! Each model turn yields exactly one step: a thought, a tool call or the
//! final answer. Tool results are verified, conflicting readings trigger a
//! backtrack to the last checkpoint before the call, and the token budget is
//! checked after every step that spends tokens.

mod action;
mod answer;
mod budget;
mod state;
mod types;
mod verify;

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

pub use action::{parse_action, Action, FINAL_PREFIX, TOOL_PREFIX};
pub use answer::{answer_matches, extract_answer, normalize_number};
pub use budget::{enforce_budget, BudgetAction};
pub use state::{backtrack_turn, AgentState, BacktrackError, BacktrackPolicy, Checkpoint, BACKTRACK_TAG};
pub use types::{
    AgentConfig, BacktrackEvent, BenchmarkItem, Difficulty, ReasoningStep, ReasoningTrace, RunRecord, StepKind,
    Timing, TokenBudget, ToolOutcome, TraceStatus,
};
pub use verify::{parse_verdict, verify_step, Verdict, Verification, VERIFY_MAX_TOKENS};

use crate::model::{ChatTurn, ModelClient};
use crate::tools::{render_tool_prompt, ToolRegistry, ToolResult};

/// Consecutive unparseable outputs tolerated before the run is aborted.
pub const MAX_MALFORMED: u32 = 3;

const CONTINUE_PROMPT: &str = "Continue.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("invalid item: {0}")]
    InvalidItem(String),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("enabled tool `{0}` is not registered")]
    UnknownTool(String),
}

fn reasoning_preset(mode: &str) -> String {
    match mode {
        "qwq" => "Reason step by step before answering. Question your own readings of the image, \
                  check every number you rely on, and prefer tools over guessing."
            .to_string(),
        other => format!("Reasoning mode: {other}. Reason step by step before answering."),
    }
}

/// System prompt for a given configuration. Only enabled tools appear.
pub fn system_prompt(config: &AgentConfig, tools: &ToolRegistry) -> String {
    let mut prompt = reasoning_preset(&config.reasoning_mode);
    prompt.push_str(
        "\n\nWrite your reasoning as plain text. When you are done, write one line `FINAL ANSWER: <answer>`.",
    );
    let block = render_tool_prompt(tools, &config.enabled_tools);
    if !block.is_empty() {
        prompt.push_str("\n\n");
        prompt.push_str(&block);
    }
    prompt
}

pub fn question_turn(item: &BenchmarkItem) -> ChatTurn {
    let mut text = item.question.trim().to_string();
    if let Some(choices) = &item.choices {
        text.push_str("\n\nChoices:");
        for (label, choice) in choices {
            text.push_str(&format!("\n({label}) {choice}"));
        }
        text.push_str("\n\nAnswer with the label of the correct choice.");
    }
    ChatTurn::user(text).with_image(&item.image_ref)
}

fn observation_turn(tool: &str, result: &ToolResult) -> ChatTurn {
    if result.success {
        ChatTurn::tool(format!("[{tool} result]\n{}", result.payload))
    } else {
        ChatTurn::tool(format!("[{tool} error]\n{}", result.error.as_deref().unwrap_or("failed")))
    }
}

/// Hex digest identifying a configuration together with its tool backends.
/// The per-seed sampling seed is excluded so all seeds of a run share it.
pub fn config_fingerprint(config: &AgentConfig, tools: &ToolRegistry) -> String {
    let mut c = config.clone();
    c.model_params.seed = 0;
    let doc = serde_json::json!({ "agent": c, "tools": tools.describe() });
    let digest = Sha256::digest(serde_json::to_vec(&doc).expect("config serializes"));
    hex::encode(&digest[..8])
}

/// Runs the reasoning loop for one item.
pub struct Agent<'a> {
    config: &'a AgentConfig,
    tools: ToolRegistry,
}

struct Outcome {
    status: TraceStatus,
    final_text: Option<String>,
    error: Option<String>,
}

impl<'a> Agent<'a> {
    pub fn new(config: &'a AgentConfig, tools: &ToolRegistry) -> Result<Self, AgentError> {
        config.validate().map_err(AgentError::InvalidConfig)?;
        if let Some(missing) = config.enabled_tools.iter().find(|t| !tools.contains(t)) {
            return Err(AgentError::UnknownTool(missing.clone()));
        }
        Ok(Self { config, tools: tools.with_enabled(&config.enabled_tools) })
    }

    pub fn fingerprint(&self) -> String {
        config_fingerprint(self.config, &self.tools)
    }

    /// Runs with the reasoning model doubling as verifier.
    pub fn run_item(&self, item: &BenchmarkItem, model: &dyn ModelClient) -> Result<RunRecord, AgentError> {
        self.run_item_with_verifier(item, model, model)
    }

    pub fn run_item_with_verifier(
        &self,
        item: &BenchmarkItem,
        model: &dyn ModelClient,
        verifier: &dyn ModelClient,
    ) -> Result<RunRecord, AgentError> {
        item.validate().map_err(AgentError::InvalidItem)?;
        let started = Instant::now();
        let mut state = AgentState::new(vec![ChatTurn::system(system_prompt(self.config, &self.tools)), question_turn(item)]);
        state.take_checkpoint();
        let mut accounted_ms = 0u64;
        let outcome = self.drive(item, model, verifier, &mut state, &mut accounted_ms);

        let wall_time_ms = match self.config.timing {
            Timing::Wall => started.elapsed().as_millis() as u64,
            Timing::Accounted => accounted_ms,
        };
        let (steps, backtracks, total_tokens) = state.into_parts();
        let approx_tokens = steps.iter().any(|s| s.approx);
        let predicted = outcome.final_text.as_deref().map(|t| extract_answer(t, item)).unwrap_or_default();
        let correct = outcome.status == TraceStatus::Completed && answer_matches(&predicted, item);
        Ok(RunRecord {
            trace: ReasoningTrace {
                item_id: item.id.clone(),
                status: outcome.status,
                total_tokens,
                steps,
                backtracks,
                wall_time_ms,
            },
            dataset: item.dataset.clone(),
            difficulty: item.difficulty,
            seed: self.config.model_params.seed,
            config_fingerprint: self.fingerprint(),
            predicted,
            gold: item.gold_answer.clone(),
            correct,
            approx_tokens,
            error: outcome.error,
        })
    }

    fn policy(&self) -> BacktrackPolicy {
        BacktrackPolicy { enabled: self.config.backtrace_enabled, max_backtracks: self.config.max_backtracks }
    }

    /// Rewinds to the last checkpoint taken before step `call_index`.
    fn try_backtrack(&self, state: &mut AgentState, call_index: usize, reason: &str) -> bool {
        let Some(cp) = state.checkpoint_before(call_index).map(|c| c.checkpoint_id) else {
            return false;
        };
        match state.backtrack(cp, reason, self.policy()) {
            Ok(ev) => {
                debug!(from = ev.from_step, to = ev.to_checkpoint, reason, "backtracked");
                true
            }
            Err(e) => {
                debug!(error = %e, reason, "not backtracking, continuing forward");
                false
            }
        }
    }

    fn drive(
        &self,
        item: &BenchmarkItem,
        model: &dyn ModelClient,
        verifier: &dyn ModelClient,
        state: &mut AgentState,
        accounted_ms: &mut u64,
    ) -> Outcome {
        let budget = self.config.budget;
        let params = &self.config.model_params;
        let unfinished = || Outcome { status: TraceStatus::Unfinished, final_text: None, error: None };
        let mut warned = false;
        let mut malformed = 0u32;
        let mut consecutive_thoughts = 0u32;
        // Successful readings per (tool, canonical args), for conflict detection.
        let mut readings: BTreeMap<(String, String), String> = BTreeMap::new();

        for _turn in 0..self.config.max_turns {
            let mut prompt = state.context().to_vec();
            if warned {
                prompt.push(ChatTurn::user(budget::brevity_instruction(state.total_tokens(), &budget)));
            }
            let completion = match model.complete(&prompt, params) {
                Ok(c) => c,
                Err(e) => return Outcome { status: TraceStatus::Error, final_text: None, error: Some(e.to_string()) },
            };
            *accounted_ms += completion.latency_ms;
            let (tokens, approx) = completion.output_tokens();
            state.push_turn(ChatTurn::assistant(&completion.text));
            let action = parse_action(&completion.text);

            let (name, args) = match action {
                Action::FinalAnswer(_) => {
                    let mut step = ReasoningStep::new(StepKind::FinalAnswer, &completion.text, tokens);
                    step.approx = approx;
                    state.push_step(step);
                    return Outcome { status: TraceStatus::Completed, final_text: Some(completion.text), error: None };
                }
                Action::ToolCall { name, args } if self.tools.is_enabled(&name) => (name, args),
                other => {
                    let mut step = ReasoningStep::new(StepKind::Thought, &completion.text, tokens);
                    step.approx = approx;
                    state.push_step(step);
                    let nudge = match &other {
                        Action::Thought { malformed: Some(reason), .. } => {
                            malformed += 1;
                            format!("Could not read your action ({reason}). Use `{TOOL_PREFIX} <name> <json-args>` or `{FINAL_PREFIX} <answer>`.")
                        }
                        Action::ToolCall { name, .. } => {
                            malformed = 0;
                            format!("Tool `{name}` is not available. Continue without it.")
                        }
                        _ => {
                            malformed = 0;
                            CONTINUE_PROMPT.to_string()
                        }
                    };
                    state.push_turn(ChatTurn::user(nudge));
                    match budget.check(state.total_tokens()) {
                        BudgetAction::Truncate => return unfinished(),
                        BudgetAction::Warn => warned = true,
                        BudgetAction::Continue => {}
                    }
                    if malformed >= MAX_MALFORMED {
                        return Outcome {
                            status: TraceStatus::Error,
                            final_text: None,
                            error: Some(format!("{MAX_MALFORMED} consecutive malformed model outputs")),
                        };
                    }
                    consecutive_thoughts += 1;
                    if consecutive_thoughts.is_multiple_of(2) {
                        state.take_checkpoint();
                    }
                    continue;
                }
            };

            malformed = 0;
            consecutive_thoughts = 0;
            let mut call = ReasoningStep::new(StepKind::ToolCall, &completion.text, tokens);
            call.approx = approx;
            call.tool_name = Some(name.clone());
            call.tool_args = Some(Value::Object(args.clone()));
            let call_index = state.push_step(call);

            let over_budget = budget.check(state.total_tokens()) == BudgetAction::Truncate;
            let result = if over_budget {
                ToolResult {
                    payload: String::new(),
                    success: false,
                    error: Some("skipped: token budget exhausted".into()),
                    duration_ms: 0,
                    token_cost: 0,
                }
            } else {
                match self.tools.dispatch(&name, &args, &item.image_ref) {
                    Ok(r) => r,
                    Err(e) => {
                        // Gating makes this unreachable; record it rather than panic.
                        warn!(error = %e, "dispatch refused an enabled tool");
                        return Outcome { status: TraceStatus::Error, final_text: None, error: Some(e.to_string()) };
                    }
                }
            };
            *accounted_ms += result.duration_ms;
            let mut res_step = ReasoningStep::new(
                StepKind::ToolResult,
                if result.success { result.payload.clone() } else { result.error.clone().unwrap_or_default() },
                0,
            );
            res_step.tool_name = Some(name.clone());
            res_step.outcome = Some(ToolOutcome {
                success: result.success,
                error: result.error.clone(),
                duration_ms: result.duration_ms,
                token_cost: result.token_cost,
            });
            state.push_step(res_step);
            state.push_turn(observation_turn(&name, &result));
            if over_budget {
                return unfinished();
            }

            if result.success {
                let key = (name.clone(), canonical_args(&args));
                let previous = readings.insert(key, result.payload.clone());
                if let Some(prev) = previous.filter(|p| *p != result.payload) {
                    let reason = format!("conflicting `{name}` results for the same request: {prev:?} vs {:?}", result.payload);
                    if self.try_backtrack(state, call_index, &reason) {
                        continue;
                    }
                }
                if self.config.verify_enabled {
                    let v = verify_step(state.context(), &name, &result.payload, verifier, params);
                    *accounted_ms += v.latency_ms;
                    state.push_step(v.step);
                    match budget.check(state.total_tokens()) {
                        BudgetAction::Truncate => return unfinished(),
                        BudgetAction::Warn => warned = true,
                        BudgetAction::Continue => {}
                    }
                    if let Verdict::Inconsistent(reason) = v.verdict {
                        if self.try_backtrack(state, call_index, &reason) {
                            continue;
                        }
                    }
                }
            }
            match budget.check(state.total_tokens()) {
                BudgetAction::Warn => warned = true,
                BudgetAction::Truncate => return unfinished(),
                BudgetAction::Continue => {}
            }
            state.take_checkpoint();
        }
        Outcome {
            status: TraceStatus::Error,
            final_text: None,
            error: Some(format!("turn limit of {} reached", self.config.max_turns)),
        }
    }
}

fn canonical_args(args: &Map<String, Value>) -> String {
    // serde_json maps are ordered by key, so this is canonical.
    serde_json::to_string(args).expect("args serialize")
}
