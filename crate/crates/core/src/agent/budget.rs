use serde::{Deserialize, Serialize};

use super::types::{ReasoningTrace, TokenBudget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetAction {
    Continue,
    /// Past the soft threshold: the next prompt carries a brevity instruction.
    Warn,
    Truncate,
}

impl TokenBudget {
    pub fn check(&self, total_tokens: u64) -> BudgetAction {
        if total_tokens >= self.hard_cutoff {
            BudgetAction::Truncate
        } else if total_tokens >= self.soft_warn {
            BudgetAction::Warn
        } else {
            BudgetAction::Continue
        }
    }
}

pub fn enforce_budget(trace: &ReasoningTrace, budget: &TokenBudget) -> BudgetAction {
    budget.check(trace.total_tokens)
}

pub(crate) fn brevity_instruction(total: u64, budget: &TokenBudget) -> String {
    format!(
        "You have used {total} of {} reasoning tokens. Be brief: stop exploring and give FINAL ANSWER: <answer> as soon as possible.",
        budget.hard_cutoff
    )
}
