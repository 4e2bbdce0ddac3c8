use std::sync::Arc;

use serde_json::Value;

use super::{BackendKind, BackendOutput, ToolBackend, ToolInvocation};
use crate::model::{count_tokens_fallback, ChatTurn, ModelClient, ModelParams};

/// A perception tool served by a multimodal chat endpoint with a
/// task-specific system prompt.
pub struct EndpointTool {
    client: Arc<dyn ModelClient>,
    system_prompt: String,
    params: ModelParams,
    label: String,
}

impl EndpointTool {
    pub fn new(client: Arc<dyn ModelClient>, system_prompt: impl Into<String>, params: ModelParams, label: impl Into<String>) -> Self {
        Self { client, system_prompt: system_prompt.into(), params, label: label.into() }
    }

    pub fn default_system_prompt(tool: &str) -> &'static str {
        match tool {
            "ocr" => "You are an OCR engine. Transcribe the requested text and numbers exactly as they appear. Output only the transcription.",
            "caption" => "You describe images for a reasoning system. Be factual and mention layout, labels and quantities.",
            _ => "You answer questions about an image. Answer briefly and only from what is visible.",
        }
    }

    fn instruction(call: &ToolInvocation<'_>) -> String {
        let get = |k: &str| call.args.get(k).and_then(Value::as_str);
        match call.tool {
            "ocr" => format!("Transcribe the text in the {} region of the image.", get("region").unwrap_or("full")),
            "caption" => format!("Describe the image ({} detail).", get("detail").unwrap_or("normal")),
            _ => get("question").unwrap_or("What does the image show?").to_string(),
        }
    }
}

impl ToolBackend for EndpointTool {
    fn kind(&self) -> BackendKind {
        BackendKind::ModelEndpoint
    }

    fn describe(&self) -> String {
        format!("endpoint:{}", self.label)
    }

    fn invoke(&self, call: ToolInvocation<'_>) -> Result<BackendOutput, String> {
        let turns = [
            ChatTurn::system(&self.system_prompt),
            ChatTurn::user(Self::instruction(&call)).with_image(call.image_ref),
        ];
        let result = self.client.complete(&turns, &self.params).map_err(|e| e.to_string())?;
        let token_cost = match (result.prompt_tokens, result.completion_tokens) {
            (Some(p), Some(c)) => p + c,
            (None, Some(c)) => c,
            _ => count_tokens_fallback(&result.text),
        };
        Ok(BackendOutput { text: result.text, token_cost, duration_ms: Some(result.latency_ms) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScriptedModel, ScriptedReply};
    use serde_json::json;

    #[test]
    fn sends_instruction_with_image() {
        let model = Arc::new(ScriptedModel::new(vec![ScriptedReply::with_tokens("k = 120", 4)]));
        let tool = EndpointTool::new(model.clone(), EndpointTool::default_system_prompt("ocr"), ModelParams::default(), "local");
        let args = json!({"region": "axis"}).as_object().unwrap().clone();
        let out = tool.invoke(ToolInvocation { tool: "ocr", args: &args, image_ref: "chart.png" }).unwrap();
        assert_eq!(out.text, "k = 120");
        assert_eq!(out.token_cost, 4);
        let calls = model.calls();
        assert_eq!(calls[0][1].image.as_deref(), Some("chart.png"));
        assert!(calls[0][1].content.contains("axis"));
    }

    #[test]
    fn transport_failure_is_reported() {
        let model = Arc::new(ScriptedModel::new(vec![]));
        let tool = EndpointTool::new(model, "s", ModelParams::default(), "x");
        let args = json!({"question": "?"}).as_object().unwrap().clone();
        assert!(tool.invoke(ToolInvocation { tool: "vqa", args: &args, image_ref: "a" }).is_err());
    }
}
