//! Stock model providers: scripted per-item sessions and a shared HTTP client.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ModelProvider, Session};
use crate::agent::BenchmarkItem;
use crate::model::{ModelClient, ReplyRule, RuleModel, ScriptedModel, ScriptedReply};

/// Either a fixed reply queue or conversation-matching rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Script {
    Replies(Vec<ScriptedReply>),
    Rules(Vec<ReplyRule>),
}

impl Script {
    pub fn build(&self) -> Box<dyn ModelClient> {
        match self {
            Script::Replies(r) => Box::new(ScriptedModel::new(r.clone())),
            Script::Rules(r) => Box::new(RuleModel::new(r.clone())),
        }
    }
}

/// Fresh scripted models for every item, so each item replays its script
/// from the start regardless of which worker picks it up. Seeds are ignored.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    pub default: Option<Script>,
    pub items: BTreeMap<String, Script>,
    pub verifier: Option<Script>,
}

impl ModelProvider for ScriptedProvider {
    fn session(&self, item: &BenchmarkItem, _seed: u64) -> Result<Session, String> {
        let script = self
            .items
            .get(&item.id)
            .or(self.default.as_ref())
            .ok_or_else(|| format!("no script for item {:?}", item.id))?;
        Ok(Session { model: script.build(), verifier: self.verifier.as_ref().map(Script::build) })
    }
}

/// Shares one client (and its connection pool) across all items.
pub struct SharedProvider {
    pub model: Arc<dyn ModelClient>,
    pub verifier: Option<Arc<dyn ModelClient>>,
}

impl ModelProvider for SharedProvider {
    fn session(&self, _item: &BenchmarkItem, _seed: u64) -> Result<Session, String> {
        Ok(Session {
            model: Box::new(self.model.clone()),
            verifier: self.verifier.clone().map(|v| Box::new(v) as Box<dyn ModelClient>),
        })
    }
}
