//! Tool declarations, gating and dispatch.
//!
//! Four tools exist: `caption`, `code`, `ocr` and `vqa`. Each is backed by a
//! model endpoint, the sandbox worker (code only) or a scripted table. The
//! registry is immutable once built; ablations derive gated views with
//! [`ToolRegistry::with_enabled`].

mod endpoint;
pub mod sandbox;
mod scripted;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use endpoint::EndpointTool;
pub use sandbox::SandboxTool;
pub use scripted::{ScriptedTool, ScriptedToolResponse};

pub const TOOL_NAMES: [&str; 4] = ["caption", "code", "ocr", "vqa"];

/// Tool payloads longer than this are tail-truncated.
pub const MAX_PAYLOAD_CHARS: usize = 2048;
const TRUNCATION_MARKER: &str = "\n…[truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    ModelEndpoint,
    SandboxWorker,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    String,
    Number,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub ty: ArgType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub args_schema: Vec<ArgSpec>,
    pub enabled: bool,
    pub backend: BackendKind,
}

fn arg(name: &str, ty: ArgType, required: bool) -> ArgSpec {
    ArgSpec { name: name.into(), ty, required }
}

impl ToolSpec {
    /// The built-in declaration for one of [`TOOL_NAMES`].
    pub fn standard(name: &str, backend: BackendKind) -> Option<Self> {
        let (description, args_schema) = match name {
            "ocr" => (
                "Read text and numbers from the image (labels, axis ticks, table cells, formulas).",
                vec![arg("region", ArgType::String, false)],
            ),
            "caption" => (
                "Describe the image content and layout in plain language.",
                vec![arg("detail", ArgType::String, false)],
            ),
            "vqa" => ("Ask a focused question about the image and get a short answer.", vec![arg("question", ArgType::String, true)]),
            "code" => (
                "Run a Python snippet and return what it prints. Use it for arithmetic, fitting and checking numbers.",
                vec![arg("source", ArgType::String, true), arg("timeout_s", ArgType::Number, false)],
            ),
            _ => return None,
        };
        Some(Self { name: name.into(), description: description.into(), args_schema, enabled: true, backend })
    }

    /// The single prompt line advertising this tool.
    pub fn prompt_line(&self) -> String {
        let args = self
            .args_schema
            .iter()
            .map(|a| {
                let ty = match a.ty {
                    ArgType::String => "string",
                    ArgType::Number => "number",
                };
                format!("\"{}\": {ty}{}", a.name, if a.required { "" } else { " (optional)" })
            })
            .collect::<Vec<_>>()
            .join(", ");
        format!("- {}: {} Args: {{{args}}}", self.name, self.description)
    }

    pub fn validate_args(&self, args: &Map<String, Value>) -> Result<(), String> {
        for key in args.keys() {
            if !self.args_schema.iter().any(|a| &a.name == key) {
                return Err(format!("unknown argument `{key}` for {}", self.name));
            }
        }
        for a in &self.args_schema {
            match (args.get(&a.name), a.ty) {
                (None, _) if a.required => return Err(format!("missing required argument `{}`", a.name)),
                (None, _) => {}
                (Some(Value::String(_)), ArgType::String) | (Some(Value::Number(_)), ArgType::Number) => {}
                (Some(v), ty) => return Err(format!("argument `{}` should be {ty:?}, got {v}", a.name)),
            }
        }
        Ok(())
    }
}

/// What a backend sees for one call.
#[derive(Debug, Clone, Copy)]
pub struct ToolInvocation<'a> {
    pub tool: &'a str,
    pub args: &'a Map<String, Value>,
    pub image_ref: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendOutput {
    pub text: String,
    pub token_cost: u64,
    /// Backend-measured duration; dispatch measures wall time when absent.
    pub duration_ms: Option<u64>,
}

pub trait ToolBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    /// Stable description used in config fingerprints (no secrets).
    fn describe(&self) -> String;
    fn invoke(&self, call: ToolInvocation<'_>) -> Result<BackendOutput, String>;
}

/// Outcome of one dispatch. Failed results carry a non-empty `error`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub payload: String,
    pub success: bool,
    pub error: Option<String>,
    pub duration_ms: u64,
    pub token_cost: u64,
}

impl ToolResult {
    fn failure(error: String, duration_ms: u64) -> Self {
        Self { payload: String::new(), success: false, error: Some(error), duration_ms, token_cost: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    Unknown(String),
    #[error("tool `{0}` is disabled")]
    Disabled(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("`{0}` is not one of the supported tools")]
    UnsupportedTool(String),
    #[error("tool `{0}` registered twice")]
    Duplicate(String),
    #[error("the code tool needs a sandbox worker or scripted backend, not {0:?}")]
    CodeBackend(BackendKind),
}

#[derive(Clone)]
struct Registered {
    spec: ToolSpec,
    backend: Arc<dyn ToolBackend>,
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Registered>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.values().map(|r| &r.spec)).finish()
    }
}

pub fn cap_payload(text: &str) -> String {
    if text.chars().count() <= MAX_PAYLOAD_CHARS {
        return text.to_string();
    }
    let keep = MAX_PAYLOAD_CHARS - TRUNCATION_MARKER.chars().count();
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers one of the standard tools.
    pub fn register(&mut self, name: &str, backend: Arc<dyn ToolBackend>) -> Result<(), RegistryError> {
        let spec = ToolSpec::standard(name, backend.kind()).ok_or_else(|| RegistryError::UnsupportedTool(name.into()))?;
        self.register_spec(spec, backend)
    }

    pub fn register_spec(&mut self, spec: ToolSpec, backend: Arc<dyn ToolBackend>) -> Result<(), RegistryError> {
        if !TOOL_NAMES.contains(&spec.name.as_str()) {
            return Err(RegistryError::UnsupportedTool(spec.name));
        }
        if self.tools.contains_key(&spec.name) {
            return Err(RegistryError::Duplicate(spec.name));
        }
        if spec.name == "code" && spec.backend == BackendKind::ModelEndpoint {
            return Err(RegistryError::CodeBackend(spec.backend));
        }
        self.tools.insert(spec.name.clone(), Registered { spec, backend });
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name).map(|r| &r.spec)
    }

    pub fn is_enabled(&self, name: &str) -> bool {
        self.spec(name).is_some_and(|s| s.enabled)
    }

    /// A view of this registry where exactly `enabled` tools are switched on.
    pub fn with_enabled(&self, enabled: &BTreeSet<String>) -> Self {
        let mut view = self.clone();
        for (name, r) in &mut view.tools {
            r.spec.enabled = enabled.contains(name);
        }
        view
    }

    /// Stable description of every registered backend, for fingerprints.
    pub fn describe(&self) -> Vec<(String, String)> {
        self.tools.iter().map(|(n, r)| (n.clone(), r.backend.describe())).collect()
    }

    /// Runs one tool call. Backend and argument failures come back as failed
    /// results; only calls to unknown or disabled tools are errors.
    pub fn dispatch(&self, name: &str, args: &Map<String, Value>, image_ref: &str) -> Result<ToolResult, ToolError> {
        let r = self.tools.get(name).ok_or_else(|| ToolError::Unknown(name.into()))?;
        if !r.spec.enabled {
            return Err(ToolError::Disabled(name.into()));
        }
        if let Err(e) = r.spec.validate_args(args) {
            return Ok(ToolResult::failure(format!("invalid arguments: {e}"), 0));
        }
        let started = Instant::now();
        let outcome = r.backend.invoke(ToolInvocation { tool: name, args, image_ref });
        let measured = started.elapsed().as_millis() as u64;
        Ok(match outcome {
            Ok(out) => ToolResult {
                payload: cap_payload(&out.text),
                success: true,
                error: None,
                duration_ms: out.duration_ms.unwrap_or(measured),
                token_cost: out.token_cost,
            },
            Err(e) => {
                let e = if e.trim().is_empty() { "tool backend failed".to_string() } else { e };
                ToolResult::failure(e, measured)
            }
        })
    }
}

/// The tool block for the system prompt: exactly the tools in `enabled` that
/// are registered, one line each, in name order. Empty when none are.
pub fn render_tool_prompt(registry: &ToolRegistry, enabled: &BTreeSet<String>) -> String {
    let lines: Vec<String> = registry
        .tools
        .values()
        .filter(|r| enabled.contains(&r.spec.name))
        .map(|r| r.spec.prompt_line())
        .collect();
    if lines.is_empty() {
        return String::new();
    }
    format!(
        "Available tools. Call one per turn on its own line as `TOOL: <name> <json-args>`.\n{}",
        lines.join("\n")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn scripted_all() -> ToolRegistry {
        let mut reg = ToolRegistry::new();
        for name in TOOL_NAMES {
            reg.register(name, Arc::new(ScriptedTool::constant(format!("{name} output")))).unwrap();
        }
        reg
    }

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn prompt_lists_enabled_in_name_order() {
        let reg = scripted_all();
        let block = render_tool_prompt(&reg, &set(&["vqa", "ocr", "code", "caption"]));
        let order: Vec<usize> = ["- caption:", "- code:", "- ocr:", "- vqa:"].iter().map(|p| block.find(p).unwrap()).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        let only_ocr = render_tool_prompt(&reg, &set(&["ocr"]));
        assert!(only_ocr.contains("- ocr:") && !only_ocr.contains("- vqa:"));
        assert_eq!(render_tool_prompt(&reg, &set(&[])), "");
    }

    #[test]
    fn scripted_passthrough() {
        let mut reg = ToolRegistry::new();
        let tool = ScriptedTool::new(vec![ScriptedToolResponse {
            image: Some("X.png".into()),
            args: None,
            output: "speed 60 density 20".into(),
            token_cost: 0,
        }]);
        reg.register("ocr", Arc::new(tool)).unwrap();
        let r = reg.dispatch("ocr", &obj(json!({"region": "full"})), "X.png").unwrap();
        assert!(r.success);
        assert_eq!(r.payload, "speed 60 density 20");
    }

    #[test]
    fn disabled_tool_is_an_error() {
        let reg = scripted_all().with_enabled(&set(&["ocr"]));
        assert_eq!(reg.dispatch("caption", &Map::new(), "x"), Err(ToolError::Disabled("caption".into())));
        assert_eq!(reg.dispatch("draw", &Map::new(), "x"), Err(ToolError::Unknown("draw".into())));
    }

    #[test]
    fn invalid_args_become_failed_results() {
        let reg = scripted_all();
        let r = reg.dispatch("vqa", &Map::new(), "x").unwrap();
        assert!(!r.success && r.error.as_deref().unwrap().contains("question"));
        let r = reg.dispatch("code", &obj(json!({"source": 1})), "x").unwrap();
        assert!(!r.success);
        let r = reg.dispatch("ocr", &obj(json!({"zoom": 2})), "x").unwrap();
        assert!(!r.success);
    }

    #[test]
    fn backend_failure_is_contained() {
        let mut reg = ToolRegistry::new();
        reg.register("ocr", Arc::new(ScriptedTool::failing("engine down"))).unwrap();
        let r = reg.dispatch("ocr", &Map::new(), "x").unwrap();
        assert!(!r.success);
        assert_eq!(r.error.as_deref(), Some("engine down"));
    }

    #[test]
    fn payloads_are_capped() {
        let long = "x".repeat(5000);
        let capped = cap_payload(&long);
        assert_eq!(capped.chars().count(), MAX_PAYLOAD_CHARS);
        assert!(capped.ends_with("[truncated]"));
        assert_eq!(cap_payload("short"), "short");
    }

    #[test]
    fn registration_rules() {
        let mut reg = ToolRegistry::new();
        assert!(matches!(
            reg.register("draw", Arc::new(ScriptedTool::constant("x"))),
            Err(RegistryError::UnsupportedTool(_))
        ));
        reg.register("ocr", Arc::new(ScriptedTool::constant("x"))).unwrap();
        assert!(matches!(reg.register("ocr", Arc::new(ScriptedTool::constant("x"))), Err(RegistryError::Duplicate(_))));
        let spec = ToolSpec::standard("code", BackendKind::ModelEndpoint).unwrap();
        assert!(matches!(
            reg.register_spec(spec, Arc::new(ScriptedTool::constant("x"))),
            Err(RegistryError::CodeBackend(_))
        ));
    }

    #[test]
    fn scripted_dispatch_is_deterministic() {
        let reg = scripted_all();
        let args = obj(json!({"question": "how many bars?"}));
        let a = reg.dispatch("vqa", &args, "img").unwrap();
        let b = reg.dispatch("vqa", &args, "img").unwrap();
        assert_eq!(a, b);
    }
}
