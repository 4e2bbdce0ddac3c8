use std::thread;
use std::time::Duration;

use tracing::warn;

use super::{ChatTurn, CompletionResult, ModelClient, ModelError, ModelParams};

/// Exponential backoff for transient transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_delay: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }
}

/// Wraps any client with the retry policy. Non-transient errors pass through
/// on the first failure.
pub struct Retrying<C> {
    inner: C,
    policy: RetryPolicy,
}

impl<C: ModelClient> Retrying<C> {
    pub fn new(inner: C, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: ModelClient> ModelClient for Retrying<C> {
    fn complete(&self, turns: &[ChatTurn], params: &ModelParams) -> Result<CompletionResult, ModelError> {
        let mut attempt = 0;
        loop {
            match self.inner.complete(turns, params) {
                Err(e) if e.is_transient() && attempt < self.policy.max_retries => {
                    let delay = self.policy.delay_for(attempt);
                    warn!(attempt, ?delay, error = %e, "retrying model call");
                    thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScriptedModel, ScriptedReply};

    fn fast() -> RetryPolicy {
        RetryPolicy { max_retries: 2, base_delay: Duration::from_millis(1) }
    }

    fn turns() -> Vec<ChatTurn> {
        vec![ChatTurn::system("s"), ChatTurn::user("u")]
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let model = ScriptedModel::new(vec![
            ScriptedReply::fail(ModelError::Transport("reset".into())),
            ScriptedReply::fail(ModelError::Transport("reset".into())),
            ScriptedReply::text("ok"),
        ]);
        let client = Retrying::new(model, fast());
        let out = client.complete(&turns(), &ModelParams::default()).unwrap();
        assert_eq!(out.text, "ok");
        assert_eq!(client.inner().call_count(), 3);
    }

    #[test]
    fn gives_up_after_two_retries() {
        let model = ScriptedModel::new(vec![
            ScriptedReply::fail(ModelError::Transport("a".into())),
            ScriptedReply::fail(ModelError::Transport("b".into())),
            ScriptedReply::fail(ModelError::Transport("c".into())),
            ScriptedReply::text("never"),
        ]);
        let client = Retrying::new(model, fast());
        let err = client.complete(&turns(), &ModelParams::default()).unwrap_err();
        assert_eq!(err, ModelError::Transport("c".into()));
        assert_eq!(client.inner().call_count(), 3);
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let model = ScriptedModel::new(vec![
            ScriptedReply::fail(ModelError::Auth("bad key".into())),
            ScriptedReply::text("unreachable"),
        ]);
        let client = Retrying::new(model, fast());
        assert!(matches!(client.complete(&turns(), &ModelParams::default()), Err(ModelError::Auth(_))));
        assert_eq!(client.inner().call_count(), 1);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { max_retries: 2, base_delay: Duration::from_millis(100) };
        assert_eq!(p.delay_for(0), Duration::from_millis(100));
        assert_eq!(p.delay_for(1), Duration::from_millis(200));
        assert_eq!(p.delay_for(2), Duration::from_millis(400));
    }
}
