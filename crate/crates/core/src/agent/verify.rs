use tracing::warn;

use super::types::{ReasoningStep, StepKind};
use crate::model::{ChatTurn, ModelClient, ModelParams, Role};

/// Upper bound on tokens a self-check may produce.
pub const VERIFY_MAX_TOKENS: u32 = 256;

const VERIFIER_PROMPT: &str = "You audit step-by-step visual reasoning. Decide whether the latest tool observation \
contradicts anything stated earlier in the reasoning (for example a number read differently before). \
Reply with exactly `CONSISTENT`, or `INCONSISTENT: <short reason>`.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Consistent,
    Inconsistent(String),
}

pub fn parse_verdict(reply: &str) -> Verdict {
    let trimmed = reply.trim();
    let upper = trimmed.to_ascii_uppercase();
    if upper.starts_with("INCONSISTENT") {
        let reason = trimmed["INCONSISTENT".len()..].trim_start_matches([':', ' ', '-']).trim();
        let reason = if reason.is_empty() { "verification reported an inconsistency" } else { reason };
        Verdict::Inconsistent(reason.to_string())
    } else {
        Verdict::Consistent
    }
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub verdict: Verdict,
    /// The `Verification` step to append to the trace.
    pub step: ReasoningStep,
    pub latency_ms: u64,
}

fn transcript(context: &[ChatTurn]) -> String {
    context
        .iter()
        .filter(|t| t.role != Role::System)
        .map(|t| {
            let who = match t.role {
                Role::User => "user",
                Role::Assistant => "reasoner",
                Role::Tool => "tool",
                Role::System => "system",
            };
            format!("[{who}] {}", t.content)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the model whether the latest observation contradicts the reasoning so
/// far. Model failures fail open as `Consistent`.
pub fn verify_step(
    context: &[ChatTurn],
    tool_name: &str,
    observation: &str,
    model: &dyn ModelClient,
    params: &ModelParams,
) -> Verification {
    let turns = vec![
        ChatTurn::system(VERIFIER_PROMPT),
        ChatTurn::user(format!(
            "Reasoning so far:\n{}\n\nLatest observation from `{tool_name}`:\n{observation}",
            transcript(context)
        )),
    ];
    let params = ModelParams { max_tokens: params.max_tokens.min(VERIFY_MAX_TOKENS), ..params.clone() };
    match model.complete(&turns, &params) {
        Ok(result) => {
            let (tokens, approx) = result.output_tokens();
            let mut step = ReasoningStep::new(StepKind::Verification, result.text.clone(), tokens);
            step.approx = approx;
            Verification { verdict: parse_verdict(&result.text), step, latency_ms: result.latency_ms }
        }
        Err(e) => {
            warn!(error = %e, "verification call failed, treating observation as consistent");
            Verification {
                verdict: Verdict::Consistent,
                step: ReasoningStep::new(StepKind::Verification, format!("verification unavailable: {e}"), 0),
                latency_ms: 0,
            }
        }
    }
}
