use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::info;

use super::{validate_request, ChatTurn, CompletionResult, ModelClient, ModelError, ModelParams, Role};

/// Images larger than this are rejected; downscaling is a pre-processing step.
pub const MAX_IMAGE_BYTES: u64 = 8 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpModelConfig {
    /// Base URI (e.g. `http://localhost:8000/v1`) or the full
    /// `/chat/completions` URI.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    120
}

/// Client for chat-completions-compatible HTTP endpoints.
///
/// Images are sent inline as base64 `image_url` content parts; relative image
/// paths are resolved against `image_root`. Retries live in
/// [`super::Retrying`], not here.
#[derive(Debug)]
pub struct HttpModelClient {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    image_root: Option<PathBuf>,
    debug_wire: bool,
}

impl HttpModelClient {
    pub fn new(config: &HttpModelConfig) -> Result<Self, ModelError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| ModelError::Auth(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(Self { http, url, model: config.model.clone(), api_key, image_root: None, debug_wire: false })
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    /// Log request and response bodies (auth is never logged).
    pub fn with_debug_wire(mut self, on: bool) -> Self {
        self.debug_wire = on;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn request_body(&self, turns: &[ChatTurn], params: &ModelParams) -> Result<Value, ModelError> {
        let messages = turns
            .iter()
            .map(|t| self.encode_turn(t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(json!({
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        }))
    }

    fn encode_turn(&self, turn: &ChatTurn) -> Result<Value, ModelError> {
        // Tool observations travel as user messages: the action grammar is
        // text-level, so there is no native tool_call_id to attach.
        let role = match turn.role {
            Role::System => "system",
            Role::User | Role::Tool => "user",
            Role::Assistant => "assistant",
        };
        Ok(match &turn.image {
            None => json!({ "role": role, "content": turn.content }),
            Some(image) => json!({
                "role": role,
                "content": [
                    { "type": "text", "text": turn.content },
                    { "type": "image_url", "image_url": { "url": self.image_url(image)? } },
                ],
            }),
        })
    }

    fn image_url(&self, image: &str) -> Result<String, ModelError> {
        if image.starts_with("http://") || image.starts_with("https://") || image.starts_with("data:") {
            return Ok(image.to_string());
        }
        let path = match &self.image_root {
            Some(root) if Path::new(image).is_relative() => root.join(image),
            _ => PathBuf::from(image),
        };
        encode_image_file(&path)
    }
}

/// Reads an image file into a `data:` URI.
pub(crate) fn encode_image_file(path: &Path) -> Result<String, ModelError> {
    let meta = std::fs::metadata(path)
        .map_err(|e| ModelError::InvalidRequest(format!("image {}: {e}", path.display())))?;
    if meta.len() > MAX_IMAGE_BYTES {
        return Err(ModelError::InvalidRequest(format!(
            "image {} is {} bytes, limit is {MAX_IMAGE_BYTES}; downscale before sending",
            path.display(),
            meta.len()
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| ModelError::InvalidRequest(format!("image {}: {e}", path.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/png",
    };
    Ok(format!("data:{mime};base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
}

fn redact_images(body: &Value) -> Value {
    match body {
        Value::String(s) if s.starts_with("data:") && s.len() > 64 => {
            Value::String(format!("{}…<{} bytes>", &s[..32], s.len()))
        }
        Value::Array(items) => Value::Array(items.iter().map(redact_images).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), redact_images(v))).collect()),
        other => other.clone(),
    }
}

impl ModelClient for HttpModelClient {
    fn complete(&self, turns: &[ChatTurn], params: &ModelParams) -> Result<CompletionResult, ModelError> {
        validate_request(turns, params)?;
        let body = self.request_body(turns, params)?;
        if self.debug_wire {
            info!(target: "wire", url = %self.url, body = %redact_images(&body), "request");
        }
        let started = Instant::now();
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ModelError::Transport(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if self.debug_wire {
            info!(target: "wire", status = status.as_u16(), body = %text, "response");
        }
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(ModelError::Auth(format!("HTTP {status}: {text}"))),
            408 | 409 | 429 | 500..=599 => return Err(ModelError::Transport(format!("HTTP {status}: {text}"))),
            _ => return Err(ModelError::InvalidRequest(format!("HTTP {status}: {text}"))),
        }
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| ModelError::Transport(format!("malformed response body: {e}")))?;
        let content = parsed
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ModelError::Transport("response has no choices[0].message.content".into()))?;
        let usage = |field: &str| parsed.pointer(&format!("/usage/{field}")).and_then(Value::as_u64);
        Ok(CompletionResult {
            text: content.to_string(),
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
            latency_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client() -> HttpModelClient {
        HttpModelClient::new(&HttpModelConfig {
            endpoint: "http://localhost:1/v1/".into(),
            model: "m".into(),
            api_key_env: None,
            timeout_s: 1,
        })
        .unwrap()
    }

    #[test]
    fn url_joins_chat_completions() {
        assert_eq!(client().url(), "http://localhost:1/v1/chat/completions");
    }

    #[test]
    fn missing_key_env_is_auth_error() {
        let err = HttpModelClient::new(&HttpModelConfig {
            endpoint: "http://x".into(),
            model: "m".into(),
            api_key_env: Some("DIAGENT_TEST_SURELY_UNSET_KEY".into()),
            timeout_s: 1,
        })
        .unwrap_err();
        assert!(matches!(err, ModelError::Auth(_)));
    }

    #[test]
    fn tool_turns_go_out_as_user_with_image_parts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), [1u8, 2, 3]).unwrap();
        let c = client().with_image_root(dir.path());
        let body = c
            .request_body(
                &[ChatTurn::system("s"), ChatTurn::tool("obs"), ChatTurn::user("q").with_image("a.png")],
                &ModelParams { temperature: 0.0, max_tokens: 16, seed: 7 },
            )
            .unwrap();
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][2]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(body["seed"], 7);
    }

    #[test]
    fn oversized_image_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.png");
        let f = std::fs::File::create(&path).unwrap();
        f.set_len(MAX_IMAGE_BYTES + 1).unwrap();
        assert!(matches!(encode_image_file(&path), Err(ModelError::InvalidRequest(_))));
    }

    #[test]
    fn redaction_shortens_data_uris() {
        let v = json!({"url": format!("data:image/png;base64,{}", "A".repeat(200))});
        let r = redact_images(&v);
        assert!(r["url"].as_str().unwrap().len() < 80);
    }
}
