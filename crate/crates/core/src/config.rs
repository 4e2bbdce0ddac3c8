//! TOML run configuration: model backend, tools, budget, seeds and the
//! ablation grid. Secrets come from environment variables named here.
//!
//! ```toml
//! [model]
//! backend = "http"                 # or "scripted"
//! endpoint = "http://localhost:8000/v1"
//! model = "qwen2.5-vl-7b"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [agent]
//! tools = ["ocr", "caption", "vqa", "code"]
//!
//! [tools.ocr]
//! backend = "endpoint"
//!
//! [tools.code]
//! backend = "sandbox"
//!
//! [sandbox]
//! command = ["python3", "-m", "sandbox_worker"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, Timing, TokenBudget};
use crate::diagnostics::DEFAULT_BUCKET_WIDTH;
use crate::harness::{AblationConfig, BootstrapParams, ModelProvider, Script, ScriptedProvider, SharedProvider};
use crate::model::{HttpModelClient, HttpModelConfig, ModelClient, ModelParams, RetryPolicy, Retrying};
use crate::tools::sandbox::{SandboxPool, WorkerCommand, DEFAULT_MAX_OUTPUT_BYTES, DEFAULT_MEMORY_MB};
use crate::tools::{EndpointTool, SandboxTool, ScriptedTool, ToolRegistry, TOOL_NAMES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("model client: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelBackend {
    #[default]
    Http,
    Scripted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedModels {
    #[serde(default)]
    pub default: Option<Script>,
    #[serde(default)]
    pub items: BTreeMap<String, Script>,
    #[serde(default)]
    pub verifier: Option<Script>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub backend: ModelBackend,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Directory that relative image paths are resolved against.
    #[serde(default)]
    pub image_root: Option<PathBuf>,
    /// Separate verifier model on the same endpoint; defaults to `model`.
    #[serde(default)]
    pub verifier_model: Option<String>,
    #[serde(default)]
    pub scripted: Option<ScriptedModels>,
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    RetryPolicy::default().max_retries
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub tools: BTreeSet<String>,
    pub backtrace: bool,
    pub verify: bool,
    pub max_backtracks: u32,
    pub reasoning_mode: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_turns: u32,
    pub timing: Timing,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentConfig::default();
        Self {
            tools: a.enabled_tools,
            backtrace: a.backtrace_enabled,
            verify: a.verify_enabled,
            max_backtracks: a.max_backtracks,
            reasoning_mode: a.reasoning_mode,
            temperature: a.model_params.temperature,
            max_tokens: a.model_params.max_tokens,
            max_turns: a.max_turns,
            timing: a.timing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSection {
    pub seeds: Vec<u64>,
    pub parallelism: usize,
    pub bucket_width: u64,
    pub n_resamples: usize,
    pub level: f64,
    pub bootstrap_seed: u64,
}

impl Default for HarnessSection {
    fn default() -> Self {
        let b = BootstrapParams::default();
        Self {
            seeds: vec![1, 2, 3],
            parallelism: 4,
            bucket_width: DEFAULT_BUCKET_WIDTH,
            n_resamples: b.n_resamples,
            level: b.level,
            bootstrap_seed: b.rng_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolBackendKind {
    Endpoint,
    Sandbox,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSection {
    pub backend: ToolBackendKind,
    /// Endpoint tools: overrides of the `[model]` connection settings.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    /// Scripted tools.
    #[serde(default, flatten)]
    pub scripted: ScriptedTool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxSection {
    pub command: Vec<String>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_max_output")]
    pub max_output_bytes: usize,
    #[serde(default = "default_memory")]
    pub memory_mb: u64,
}

fn default_workers() -> usize {
    2
}

fn default_max_output() -> usize {
    DEFAULT_MAX_OUTPUT_BYTES
}

fn default_memory() -> u64 {
    DEFAULT_MEMORY_MB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub budget: TokenBudget,
    #[serde(default)]
    pub harness: HarnessSection,
    #[serde(default)]
    pub tools: BTreeMap<String, ToolSection>,
    #[serde(default)]
    pub sandbox: Option<SandboxSection>,
    #[serde(default)]
    pub ablation: Vec<AblationConfig>,
}

/// Process-level switches that are not part of the config file.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub debug_wire: bool,
    /// Used when the config has no `image_root`.
    pub image_root: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative `image_root` and sandbox paths stay relative to the working
    /// directory; nothing is rewritten.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for name in self.tools.keys() {
            if !TOOL_NAMES.contains(&name.as_str()) {
                return invalid(format!("unknown tool section [tools.{name}]"));
            }
        }
        for name in &self.agent.tools {
            if !self.tools.contains_key(name) {
                return invalid(format!("tool {name:?} is enabled but has no [tools.{name}] section"));
            }
        }
        for (name, t) in &self.tools {
            match t.backend {
                ToolBackendKind::Endpoint if name == "code" => {
                    return invalid("the code tool needs a sandbox or scripted backend".into())
                }
                ToolBackendKind::Sandbox if name != "code" => {
                    return invalid(format!("only the code tool can use the sandbox backend, not {name:?}"))
                }
                ToolBackendKind::Sandbox if self.sandbox.is_none() => {
                    return invalid("the code tool uses the sandbox but there is no [sandbox] section".into())
                }
                ToolBackendKind::Endpoint if self.endpoint_for(t).is_none() => {
                    return invalid(format!("tool {name:?} has no endpoint and [model] has none either"))
                }
                _ => {}
            }
        }
        match self.model.backend {
            ModelBackend::Http if self.model.endpoint.is_none() || self.model.model.is_none() => {
                return invalid("[model] backend \"http\" needs endpoint and model".into())
            }
            ModelBackend::Scripted => {
                let s = self.model.scripted.as_ref();
                if s.is_none_or(|s| s.default.is_none() && s.items.is_empty()) {
                    return invalid("[model] backend \"scripted\" needs [model.scripted] default or items".into());
                }
            }
            _ => {}
        }
        if let Some(sb) = &self.sandbox {
            if sb.command.is_empty() {
                return invalid("[sandbox] command is empty".into());
            }
        }
        if self.harness.seeds.is_empty() {
            return invalid("[harness] seeds is empty".into());
        }
        if self.harness.bucket_width == 0 {
            return invalid("[harness] bucket_width must be positive".into());
        }
        for a in &self.ablation {
            a.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        self.agent_config().validate().map_err(ConfigError::Invalid)
    }

    fn endpoint_for(&self, t: &ToolSection) -> Option<HttpModelConfig> {
        Some(HttpModelConfig {
            endpoint: t.endpoint.clone().or_else(|| self.model.endpoint.clone())?,
            model: t.model.clone().or_else(|| self.model.model.clone())?,
            api_key_env: t.api_key_env.clone().or_else(|| self.model.api_key_env.clone()),
            timeout_s: self.model.timeout_s,
        })
    }

    pub fn agent_config(&self) -> AgentConfig {
        let a = &self.agent;
        AgentConfig {
            enabled_tools: a.tools.clone(),
            backtrace_enabled: a.backtrace,
            verify_enabled: a.verify,
            max_backtracks: a.max_backtracks,
            budget: self.budget,
            reasoning_mode: a.reasoning_mode.clone(),
            model_params: ModelParams { temperature: a.temperature, max_tokens: a.max_tokens, seed: 0 },
            max_turns: a.max_turns,
            timing: a.timing,
        }
    }

    pub fn bootstrap_params(&self) -> BootstrapParams {
        BootstrapParams {
            n_resamples: self.harness.n_resamples,
            level: self.harness.level,
            rng_seed: self.harness.bootstrap_seed,
        }
    }

    /// The configured grid, or the standard one-module-off grid.
    pub fn ablation_grid(&self) -> Vec<AblationConfig> {
        if self.ablation.is_empty() {
            AblationConfig::standard_grid()
        } else {
            self.ablation.clone()
        }
    }

    fn http_client(&self, cfg: &HttpModelConfig, opts: &BuildOptions) -> Result<Arc<dyn ModelClient>, ConfigError> {
        let mut client = HttpModelClient::new(cfg).map_err(|e| ConfigError::Model(e.to_string()))?;
        if let Some(root) = self.model.image_root.clone().or_else(|| opts.image_root.clone()) {
            client = client.with_image_root(root);
        }
        client = client.with_debug_wire(opts.debug_wire);
        let policy = RetryPolicy { max_retries: self.model.retries, base_delay: Duration::from_millis(250) };
        Ok(Arc::new(Retrying::new(client, policy)))
    }

    pub fn build_tools(&self, opts: &BuildOptions) -> Result<ToolRegistry, ConfigError> {
        let mut reg = ToolRegistry::new();
        let mut pool: Option<Arc<SandboxPool>> = None;
        for (name, t) in &self.tools {
            let backend: Arc<dyn crate::tools::ToolBackend> = match t.backend {
                ToolBackendKind::Scripted => Arc::new(t.scripted.clone()),
                ToolBackendKind::Endpoint => {
                    let cfg = self.endpoint_for(t).expect("validated");
                    let label = format!("{}@{}", cfg.model, cfg.endpoint);
                    let prompt = t.system_prompt.clone().unwrap_or_else(|| EndpointTool::default_system_prompt(name).into());
                    let params = ModelParams { temperature: 0.0, max_tokens: t.max_tokens.unwrap_or(512), seed: 0 };
                    Arc::new(EndpointTool::new(self.http_client(&cfg, opts)?, prompt, params, label))
                }
                ToolBackendKind::Sandbox => {
                    let sb = self.sandbox.as_ref().expect("validated");
                    let p = pool.get_or_insert_with(|| {
                        let cmd = WorkerCommand { command: sb.command.clone(), max_output_bytes: sb.max_output_bytes };
                        Arc::new(SandboxPool::new(cmd, sb.workers))
                    });
                    Arc::new(SandboxTool::new(p.clone(), sb.memory_mb))
                }
            };
            reg.register(name, backend).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(reg)
    }

    /// Model used by the judge classifier: the verifier if one is configured,
    /// the main model otherwise.
    pub fn judge_model(&self, opts: &BuildOptions) -> Result<Arc<dyn ModelClient>, ConfigError> {
        match self.model.backend {
            ModelBackend::Scripted => {
                let s = self.model.scripted.clone().unwrap_or_default();
                let script = s.verifier.or(s.default).ok_or_else(|| {
                    ConfigError::Invalid("judge needs [model.scripted] verifier or default".into())
                })?;
                Ok(Arc::from(script.build()))
            }
            ModelBackend::Http => {
                let model = self.model.verifier_model.clone().or_else(|| self.model.model.clone()).expect("validated");
                let cfg = HttpModelConfig {
                    endpoint: self.model.endpoint.clone().expect("validated"),
                    model,
                    api_key_env: self.model.api_key_env.clone(),
                    timeout_s: self.model.timeout_s,
                };
                self.http_client(&cfg, opts)
            }
        }
    }

    pub fn build_provider(&self, opts: &BuildOptions) -> Result<Box<dyn ModelProvider>, ConfigError> {
        match self.model.backend {
            ModelBackend::Scripted => {
                let s = self.model.scripted.clone().unwrap_or_default();
                Ok(Box::new(ScriptedProvider { default: s.default, items: s.items, verifier: s.verifier }))
            }
            ModelBackend::Http => {
                let cfg = HttpModelConfig {
                    endpoint: self.model.endpoint.clone().expect("validated"),
                    model: self.model.model.clone().expect("validated"),
                    api_key_env: self.model.api_key_env.clone(),
                    timeout_s: self.model.timeout_s,
                };
                let model = self.http_client(&cfg, opts)?;
                let verifier = match &self.model.verifier_model {
                    Some(m) => Some(self.http_client(&HttpModelConfig { model: m.clone(), ..cfg }, opts)?),
                    None => None,
                };
                Ok(Box::new(SharedProvider { model, verifier }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::BenchmarkItem;

    const SCRIPTED: &str = r#"
[model]
backend = "scripted"

[[model.scripted.default.rules]]
when = "[ocr result]"
text = "FINAL ANSWER: B"
tokens = 12

[[model.scripted.default.rules]]
text = 'TOOL: ocr {}'
tokens = 9

[model.scripted.items.special]
replies = [{ text = "FINAL ANSWER: A", tokens = 3 }]

[agent]
tools = ["ocr", "code"]
verify = false
timing = "accounted"

[budget]
soft_warn = 100
hard_cutoff = 200

[harness]
seeds = [7]
parallelism = 2

[tools.ocr]
backend = "scripted"
default = "k=2"

[tools.code]
backend = "scripted"
fail = "no sandbox"

[[ablation]]
label = "Full"

[[ablation]]
label = "- OCR"
disabled = ["ocr"]
"#;

    fn item(id: &str) -> BenchmarkItem {
        BenchmarkItem {
            id: id.into(),
            dataset: "MMMU".into(),
            question: "q".into(),
            image_ref: "i.png".into(),
            choices: Some(vec![("A".into(), "1".into()), ("B".into(), "2".into())]),
            gold_answer: "B".into(),
            difficulty: Default::default(),
        }
    }

    #[test]
    fn scripted_config_builds_everything() {
        let cfg = RunConfig::from_toml(SCRIPTED).unwrap();
        let agent = cfg.agent_config();
        assert_eq!(agent.budget, TokenBudget::new(100, 200).unwrap());
        assert_eq!(agent.enabled_tools.len(), 2);
        assert!(!agent.verify_enabled);
        assert_eq!(cfg.harness.seeds, vec![7]);
        assert_eq!(cfg.harness.bucket_width, 250);
        assert_eq!(cfg.ablation_grid().len(), 2);

        let opts = BuildOptions::default();
        let tools = cfg.build_tools(&opts).unwrap();
        assert_eq!(tools.names().collect::<Vec<_>>(), vec!["code", "ocr"]);
        let provider = cfg.build_provider(&opts).unwrap();
        let harness = crate::harness::Harness { provider: provider.as_ref(), tools: &tools, parallelism: 2 };
        let logs = harness.run_benchmark(&[item("plain"), item("special")], &agent, &[7]).unwrap();
        let recs = &logs[0].records;
        assert_eq!(recs[0].predicted, "B");
        assert!(recs[0].correct);
        assert_eq!(recs[1].predicted, "A");
    }

    #[test]
    fn defaults_follow_agent_defaults() {
        let cfg = RunConfig::from_toml(
            "[model]\nendpoint = \"http://x/v1\"\nmodel = \"m\"\n[tools.ocr]\nbackend = \"endpoint\"\n[tools.caption]\nbackend = \"endpoint\"\n[tools.vqa]\nbackend = \"endpoint\"\n[tools.code]\nbackend = \"sandbox\"\n[sandbox]\ncommand = [\"python3\", \"w.py\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.agent_config(), AgentConfig::default());
        assert_eq!(cfg.ablation_grid(), AblationConfig::standard_grid());
        assert_eq!(cfg.bootstrap_params(), BootstrapParams::default());
        let tools = cfg.build_tools(&BuildOptions::default()).unwrap();
        assert_eq!(tools.names().count(), 4);
        assert!(tools.describe().iter().any(|(n, d)| n == "ocr" && d.contains("m@http://x/v1")));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ("[model]\nbackend = \"http\"\n[agent]\ntools = []\n", "needs endpoint"),
            ("[model]\nbackend = \"scripted\"\n[agent]\ntools = []\n", "scripted"),
            ("[model]\nendpoint=\"e\"\nmodel=\"m\"\n[agent]\ntools=[\"ocr\"]\n", "no [tools.ocr]"),
            ("[model]\nendpoint=\"e\"\nmodel=\"m\"\n[agent]\ntools=[]\n[tools.search]\nbackend=\"scripted\"\n", "unknown tool"),
            ("[model]\nendpoint=\"e\"\nmodel=\"m\"\n[agent]\ntools=[]\n[tools.code]\nbackend=\"endpoint\"\n", "code tool"),
            ("[model]\nendpoint=\"e\"\nmodel=\"m\"\n[agent]\ntools=[]\n[tools.code]\nbackend=\"sandbox\"\n", "[sandbox]"),
            ("[model]\nendpoint=\"e\"\nmodel=\"m\"\n[agent]\ntools=[]\n[budget]\nsoft_warn=10\nhard_cutoff=5\n", ""),
            ("[model]\nendpoint=\"e\"\nmodel=\"m\"\n[agent]\ntools=[]\n[[ablation]]\nlabel=\"x\"\ndisabled=[\"web\"]\n", "unknown module"),
            ("[model]\nendpoint=\"e\"\nmodel=\"m\"\ncolour=1\n", "unknown field"),
        ];
        for (text, needle) in bad {
            let err = RunConfig::from_toml(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} gave {err}");
        }
    }

    #[test]
    fn missing_api_key_is_model_error() {
        let cfg = RunConfig::from_toml(
            "[model]\nendpoint=\"http://x\"\nmodel=\"m\"\napi_key_env=\"DIAGENT_TEST_UNSET_KEY\"\n[agent]\ntools=[]\n",
        )
        .unwrap();
        assert!(matches!(cfg.build_provider(&BuildOptions::default()), Err(ConfigError::Model(_))));
    }
}
