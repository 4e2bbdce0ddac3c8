//! Active conversation state with linear checkpoints.
//!
//! The persisted step log only grows; backtracking flags steps as discarded
//! and rewinds the active context to a stored snapshot.

use std::sync::Arc;

use thiserror::Error;

use super::types::{BacktrackEvent, ReasoningStep, StepKind};
use crate::model::ChatTurn;

pub const BACKTRACK_TAG: &str = "BACKTRACK:";

/// A restore point. `step_index` is the trace position the checkpoint was
/// taken at: it covers steps `0..step_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub checkpoint_id: u32,
    pub step_index: usize,
    pub snapshot: Arc<[ChatTurn]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BacktrackPolicy {
    pub enabled: bool,
    pub max_backtracks: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BacktrackError {
    #[error("backtracking is disabled")]
    Disabled,
    #[error("backtrack limit of {0} reached")]
    LimitExceeded(u32),
    #[error("unknown checkpoint {0}")]
    UnknownCheckpoint(u32),
    #[error("checkpoint {checkpoint} at step {step_index} is not before step {from_step}")]
    NotBefore { checkpoint: u32, step_index: usize, from_step: usize },
}

#[derive(Debug, Clone, Default)]
pub struct AgentState {
    context: Vec<ChatTurn>,
    steps: Vec<ReasoningStep>,
    checkpoints: Vec<Checkpoint>,
    backtracks: Vec<BacktrackEvent>,
    next_checkpoint_id: u32,
    total_tokens: u64,
}

pub fn backtrack_turn(reason: &str) -> ChatTurn {
    ChatTurn::user(format!(
        "{BACKTRACK_TAG} {reason}\nThe reasoning after this point was discarded. Re-examine the evidence and continue."
    ))
}

impl AgentState {
    pub fn new(initial_context: Vec<ChatTurn>) -> Self {
        Self { context: initial_context, ..Self::default() }
    }

    pub fn context(&self) -> &[ChatTurn] {
        &self.context
    }

    pub fn steps(&self) -> &[ReasoningStep] {
        &self.steps
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn backtracks(&self) -> &[BacktrackEvent] {
        &self.backtracks
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn push_turn(&mut self, turn: ChatTurn) {
        self.context.push(turn);
    }

    /// Appends a step, assigning its index. Returns the index.
    pub fn push_step(&mut self, mut step: ReasoningStep) -> usize {
        step.index = self.steps.len();
        self.total_tokens += step.token_count;
        self.steps.push(step);
        self.steps.len() - 1
    }

    pub fn take_checkpoint(&mut self) -> &Checkpoint {
        let cp = Checkpoint {
            checkpoint_id: self.next_checkpoint_id,
            step_index: self.steps.len(),
            snapshot: self.context.clone().into(),
        };
        self.next_checkpoint_id += 1;
        self.checkpoints.push(cp);
        self.checkpoints.last().unwrap()
    }

    /// Most recent checkpoint whose state predates step `step_index`.
    pub fn checkpoint_before(&self, step_index: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().rev().find(|cp| cp.step_index <= step_index)
    }

    /// Restores the active context to `checkpoint_id` and appends one marker.
    ///
    /// Steps taken since the checkpoint stay in the log flagged as discarded,
    /// their tokens are not refunded. Later checkpoints are dropped.
    pub fn backtrack(
        &mut self,
        checkpoint_id: u32,
        reason: &str,
        policy: BacktrackPolicy,
    ) -> Result<&BacktrackEvent, BacktrackError> {
        if !policy.enabled {
            return Err(BacktrackError::Disabled);
        }
        if self.backtracks.len() >= policy.max_backtracks as usize {
            return Err(BacktrackError::LimitExceeded(policy.max_backtracks));
        }
        let pos = self
            .checkpoints
            .iter()
            .position(|cp| cp.checkpoint_id == checkpoint_id)
            .ok_or(BacktrackError::UnknownCheckpoint(checkpoint_id))?;
        let cp = self.checkpoints[pos].clone();
        let from_step = self.steps.len().saturating_sub(1);
        if self.steps.is_empty() || cp.step_index >= from_step {
            return Err(BacktrackError::NotBefore { checkpoint: checkpoint_id, step_index: cp.step_index, from_step });
        }
        for s in &mut self.steps[cp.step_index..] {
            s.discarded = true;
        }
        self.checkpoints.truncate(pos + 1);
        self.context = cp.snapshot.to_vec();
        self.context.push(backtrack_turn(reason));
        self.push_step(ReasoningStep::new(StepKind::BacktrackMarker, reason, 0));
        self.backtracks.push(BacktrackEvent { from_step, to_checkpoint: checkpoint_id, reason: reason.to_string() });
        Ok(self.backtracks.last().unwrap())
    }

    pub fn into_parts(self) -> (Vec<ReasoningStep>, Vec<BacktrackEvent>, u64) {
        (self.steps, self.backtracks, self.total_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ON: BacktrackPolicy = BacktrackPolicy { enabled: true, max_backtracks: 3 };

    fn thought(state: &mut AgentState, text: &str) {
        state.push_turn(ChatTurn::assistant(text));
        state.push_step(ReasoningStep::new(StepKind::Thought, text, 10));
    }

    fn state_with_steps(n: usize) -> AgentState {
        let mut s = AgentState::new(vec![ChatTurn::system("sys"), ChatTurn::user("q")]);
        s.take_checkpoint();
        for i in 0..n {
            thought(&mut s, &format!("t{i}"));
        }
        s
    }

    #[test]
    fn restore_discards_and_appends_marker() {
        let mut s = state_with_steps(3);
        // steps 0,1,2 done; checkpoint covers them
        let cp = s.take_checkpoint().clone();
        assert_eq!(cp.step_index, 3);
        for i in 3..7 {
            thought(&mut s, &format!("t{i}"));
        }
        let ev = s.backtrack(cp.checkpoint_id, "bad reading", ON).unwrap().clone();
        assert_eq!(ev.from_step, 6);
        let mut expected = cp.snapshot.to_vec();
        expected.push(backtrack_turn("bad reading"));
        assert_eq!(
            serde_json::to_vec(s.context()).unwrap(),
            serde_json::to_vec(&expected).unwrap()
        );
        let discarded: Vec<usize> = s.steps().iter().filter(|x| x.discarded).map(|x| x.index).collect();
        assert_eq!(discarded, vec![3, 4, 5, 6]);
        assert_eq!(s.steps().last().unwrap().kind, StepKind::BacktrackMarker);
        // tokens of discarded steps are not refunded
        assert_eq!(s.total_tokens(), 70);
    }

    #[test]
    fn later_checkpoints_are_dropped() {
        let mut s = state_with_steps(1);
        let first = s.take_checkpoint().checkpoint_id;
        thought(&mut s, "x");
        s.take_checkpoint();
        thought(&mut s, "y");
        s.backtrack(first, "r", ON).unwrap();
        assert_eq!(s.checkpoints().last().unwrap().checkpoint_id, first);
    }

    #[test]
    fn limits() {
        let mut s = state_with_steps(2);
        let off = BacktrackPolicy { enabled: false, max_backtracks: 3 };
        assert_eq!(s.backtrack(0, "r", off), Err(BacktrackError::Disabled));
        let zero = BacktrackPolicy { enabled: true, max_backtracks: 0 };
        assert_eq!(s.backtrack(0, "r", zero), Err(BacktrackError::LimitExceeded(0)));
        assert_eq!(s.backtrack(9, "r", ON), Err(BacktrackError::UnknownCheckpoint(9)));
        assert!(s.backtracks().is_empty());
    }

    #[test]
    fn cannot_restore_to_the_present() {
        let mut s = state_with_steps(2);
        let id = s.take_checkpoint().checkpoint_id;
        assert!(matches!(s.backtrack(id, "r", ON), Err(BacktrackError::NotBefore { .. })));
    }

    #[test]
    fn checkpoint_lookup() {
        let mut s = state_with_steps(2);
        s.take_checkpoint();
        assert_eq!(s.checkpoint_before(1).unwrap().checkpoint_id, 0);
        assert_eq!(s.checkpoint_before(2).unwrap().checkpoint_id, 1);
    }
}
