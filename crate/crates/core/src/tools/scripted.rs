use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{BackendKind, BackendOutput, ToolBackend, ToolInvocation};

/// One canned tool output, matched on image and/or exact arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedToolResponse {
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub args: Option<Map<String, Value>>,
    pub output: String,
    #[serde(default)]
    pub token_cost: u64,
}

/// Table-driven backend for tests and fixtures. Lookup is first match, then
/// `default`; with `fail` set every call fails with that message.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTool {
    #[serde(default)]
    pub responses: Vec<ScriptedToolResponse>,
    #[serde(default)]
    pub default: Option<String>,
    #[serde(default)]
    pub fail: Option<String>,
    #[serde(default)]
    pub duration_ms: u64,
}

impl ScriptedTool {
    pub fn new(responses: Vec<ScriptedToolResponse>) -> Self {
        Self { responses, ..Self::default() }
    }

    pub fn constant(output: impl Into<String>) -> Self {
        Self { default: Some(output.into()), ..Self::default() }
    }

    pub fn failing(message: impl Into<String>) -> Self {
        Self { fail: Some(message.into()), ..Self::default() }
    }
}

impl ToolBackend for ScriptedTool {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn describe(&self) -> String {
        "scripted".into()
    }

    fn invoke(&self, call: ToolInvocation<'_>) -> Result<BackendOutput, String> {
        if let Some(msg) = &self.fail {
            return Err(msg.clone());
        }
        let hit = self.responses.iter().find(|r| {
            r.image.as_deref().is_none_or(|i| i == call.image_ref) && r.args.as_ref().is_none_or(|a| a == call.args)
        });
        let (text, token_cost) = match (hit, &self.default) {
            (Some(r), _) => (r.output.clone(), r.token_cost),
            (None, Some(d)) => (d.clone(), 0),
            (None, None) => return Err(format!("no scripted {} response for {}", call.tool, call.image_ref)),
        };
        Ok(BackendOutput { text, token_cost, duration_ms: Some(self.duration_ms) })
    }
}
