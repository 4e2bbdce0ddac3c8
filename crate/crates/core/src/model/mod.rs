//! Chat-completion model clients.
//!
//! Every backend speaks the same [`ModelClient`] trait: the agent loop, the
//! model-backed tools and the verifier all go through it. Two backends ship
//! here: [`HttpModelClient`] for chat-completions-compatible endpoints and
//! [`ScriptedModel`] / [`RuleModel`] for deterministic tests.

mod http;
mod retry;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpModelClient, HttpModelConfig};
pub use retry::{RetryPolicy, Retrying};
pub use scripted::{ReplyRule, RuleModel, ScriptedModel, ScriptedReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// One message of a conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    /// Image attachment (path or URI). Only allowed on user and tool turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), image: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), image: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), image: None }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self { role: Role::Tool, content: content.into(), image: None }
    }

    pub fn with_image(mut self, image: impl Into<String>) -> Self {
        self.image = Some(image.into());
        self
    }
}

/// Sampling parameters forwarded with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 1024, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub latency_ms: u64,
}

impl CompletionResult {
    /// Completion tokens, falling back to the character approximation when the
    /// backend did not report usage. The flag is `true` for approximations.
    pub fn output_tokens(&self) -> (u64, bool) {
        match self.completion_tokens {
            Some(n) => (n, false),
            None => (count_tokens_fallback(&self.text), true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("model transport error: {0}")]
    Transport(String),
    #[error("model authentication failed: {0}")]
    Auth(String),
    #[error("invalid model request: {0}")]
    InvalidRequest(String),
}

impl ModelError {
    /// Whether a retry may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, ModelError::Transport(_))
    }
}

pub trait ModelClient: Send + Sync {
    fn complete(&self, turns: &[ChatTurn], params: &ModelParams) -> Result<CompletionResult, ModelError>;
}

impl<T: ModelClient + ?Sized> ModelClient for Arc<T> {
    fn complete(&self, turns: &[ChatTurn], params: &ModelParams) -> Result<CompletionResult, ModelError> {
        (**self).complete(turns, params)
    }
}

impl<T: ModelClient + ?Sized> ModelClient for Box<T> {
    fn complete(&self, turns: &[ChatTurn], params: &ModelParams) -> Result<CompletionResult, ModelError> {
        (**self).complete(turns, params)
    }
}

/// Approximate token count: one token per four characters, rounded up.
pub fn count_tokens_fallback(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub(crate) fn validate_request(turns: &[ChatTurn], params: &ModelParams) -> Result<(), ModelError> {
    if turns.is_empty() {
        return Err(ModelError::InvalidRequest("empty conversation".into()));
    }
    if params.max_tokens == 0 {
        return Err(ModelError::InvalidRequest("max_tokens must be positive".into()));
    }
    if turns[0].role != Role::System {
        return Err(ModelError::InvalidRequest("first turn must be the system prompt".into()));
    }
    if let Some(t) = turns
        .iter()
        .find(|t| t.image.is_some() && !matches!(t.role, Role::User | Role::Tool))
    {
        return Err(ModelError::InvalidRequest(format!("image attached to a {:?} turn", t.role)));
    }
    Ok(())
}
