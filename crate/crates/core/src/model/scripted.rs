use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{validate_request, ChatTurn, CompletionResult, ModelClient, ModelError, ModelParams};

/// One canned response. `tokens` is reported as completion usage; when absent
/// the caller falls back to the character approximation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedReply {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tokens: Option<u64>,
    #[serde(default)]
    pub latency_ms: u64,
    /// Injected failure instead of a reply.
    #[serde(skip)]
    pub error: Option<ModelError>,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), tokens: None, latency_ms: 0, error: None }
    }

    pub fn with_tokens(text: impl Into<String>, tokens: u64) -> Self {
        Self { tokens: Some(tokens), ..Self::text(text) }
    }

    pub fn fail(error: ModelError) -> Self {
        Self { error: Some(error), ..Self::text("") }
    }

    fn into_result(self) -> Result<CompletionResult, ModelError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        Ok(CompletionResult {
            text: self.text,
            prompt_tokens: None,
            completion_tokens: self.tokens,
            latency_ms: self.latency_ms,
        })
    }
}

/// Replays a fixed queue of replies, each exactly once, in order. Running
/// dry is reported as a transport error so broken test scripts surface.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    queue: Mutex<VecDeque<ScriptedReply>>,
    calls: Mutex<Vec<Vec<ChatTurn>>>,
}

impl ScriptedModel {
    pub fn new(replies: impl IntoIterator<Item = ScriptedReply>) -> Self {
        Self { queue: Mutex::new(replies.into_iter().collect()), calls: Mutex::default() }
    }

    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(ScriptedReply::text))
    }

    /// Every conversation this model has been asked to complete.
    pub fn calls(&self) -> Vec<Vec<ChatTurn>> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl ModelClient for ScriptedModel {
    fn complete(&self, turns: &[ChatTurn], params: &ModelParams) -> Result<CompletionResult, ModelError> {
        validate_request(turns, params)?;
        self.calls.lock().unwrap().push(turns.to_vec());
        match self.queue.lock().unwrap().pop_front() {
            Some(reply) => reply.into_result(),
            None => Err(ModelError::Transport("scripted model queue exhausted".into())),
        }
    }
}

/// A reply chosen by the first rule whose `when` substring occurs anywhere in
/// the conversation. A rule without `when` always matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyRule {
    #[serde(default)]
    pub when: Option<String>,
    #[serde(default)]
    pub unless: Option<String>,
    #[serde(flatten)]
    pub reply: ScriptedReply,
}

impl ReplyRule {
    fn matches(&self, transcript: &str) -> bool {
        self.when.as_deref().is_none_or(|w| transcript.contains(w))
            && self.unless.as_deref().is_none_or(|u| !transcript.contains(u))
    }
}

/// Reacts to the conversation instead of replaying a queue. Useful when the
/// same script has to behave differently under different tool sets.
#[derive(Debug, Default)]
pub struct RuleModel {
    rules: Vec<ReplyRule>,
    calls: Mutex<Vec<Vec<ChatTurn>>>,
}

impl RuleModel {
    pub fn new(rules: Vec<ReplyRule>) -> Self {
        Self { rules, calls: Mutex::default() }
    }

    pub fn calls(&self) -> Vec<Vec<ChatTurn>> {
        self.calls.lock().unwrap().clone()
    }
}

impl ModelClient for RuleModel {
    fn complete(&self, turns: &[ChatTurn], params: &ModelParams) -> Result<CompletionResult, ModelError> {
        validate_request(turns, params)?;
        self.calls.lock().unwrap().push(turns.to_vec());
        let transcript: String = turns.iter().map(|t| t.content.as_str()).collect::<Vec<_>>().join("\n");
        self.rules
            .iter()
            .find(|r| r.matches(&transcript))
            .map(|r| r.reply.clone().into_result())
            .unwrap_or_else(|| Err(ModelError::Transport("no scripted rule matched".into())))
    }
}
