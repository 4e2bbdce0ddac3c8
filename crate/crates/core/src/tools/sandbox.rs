//! Client side of the code-interpreter worker protocol.
//!
//! The worker is a child process speaking newline-delimited JSON on
//! stdin/stdout: one request line in, exactly one response line out.
//!
//! ```text
//! -> {"id":"req-1","source":"print(2+2)","timeout_s":10.0,"memory_mb":512}
//! <- {"id":"req-1","status":"Ok","stdout":"4\n","stderr":"","duration_ms":12}
//! ```
//!
//! The worker is launched with `--max-output-bytes <n>`. A worker that
//! desyncs, dies or overruns its deadline is killed and respawned on the next
//! request; the caller gets a `RuntimeError` or `Timeout` response.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use super::{BackendKind, BackendOutput, ToolBackend, ToolInvocation};
use crate::model::count_tokens_fallback;

pub const DEFAULT_TIMEOUT_S: f64 = 10.0;
pub const DEFAULT_MEMORY_MB: u64 = 512;
pub const DEFAULT_MAX_OUTPUT_BYTES: usize = 64 * 1024;
/// Extra wall time allowed past `timeout_s` before the client kills the worker.
const DEADLINE_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    #[serde(rename = "id")]
    pub request_id: String,
    pub source: String,
    pub timeout_s: f64,
    pub memory_mb: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExecStatus {
    Ok,
    Timeout,
    MemoryExceeded,
    RuntimeError,
}

impl<'de> Deserialize<'de> for ExecStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        // Accept both `MemoryExceeded` and `memory_exceeded` spellings.
        let raw = String::deserialize(d)?;
        let folded: String = raw.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_ascii_lowercase();
        match folded.as_str() {
            "ok" => Ok(ExecStatus::Ok),
            "timeout" => Ok(ExecStatus::Timeout),
            "memoryexceeded" => Ok(ExecStatus::MemoryExceeded),
            "runtimeerror" => Ok(ExecStatus::RuntimeError),
            _ => Err(serde::de::Error::custom(format!("unknown exec status {raw:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResponse {
    #[serde(rename = "id")]
    pub request_id: String,
    pub status: ExecStatus,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub duration_ms: u64,
}

impl ExecResponse {
    fn local(request_id: &str, status: ExecStatus, stderr: String, duration_ms: u64) -> Self {
        Self { request_id: request_id.to_string(), status, stdout: String::new(), stderr, duration_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SandboxError {
    #[error("failed to start sandbox worker `{program}`: {reason}")]
    Spawn { program: String, reason: String },
    #[error("invalid exec request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerCommand {
    /// Program and arguments, e.g. `["python3", "sandbox_worker.py"]`.
    pub command: Vec<String>,
    #[serde(default = "default_max_output")]
    pub max_output_bytes: usize,
}

fn default_max_output() -> usize {
    DEFAULT_MAX_OUTPUT_BYTES
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Process {
    fn spawn(cmd: &WorkerCommand) -> Result<Self, SandboxError> {
        let (program, args) = cmd
            .command
            .split_first()
            .ok_or_else(|| SandboxError::Spawn { program: String::new(), reason: "empty command".into() })?;
        let mut child = Command::new(program)
            .args(args)
            .arg("--max-output-bytes")
            .arg(cmd.max_output_bytes.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SandboxError::Spawn { program: program.clone(), reason: e.to_string() })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One supervised worker process. Requests are strictly serial.
pub struct SandboxWorker {
    command: WorkerCommand,
    process: Option<Process>,
}

impl SandboxWorker {
    pub fn new(command: WorkerCommand) -> Self {
        Self { command, process: None }
    }

    fn restart(&mut self) {
        if let Some(p) = self.process.take() {
            p.kill();
        }
    }

    pub fn execute(&mut self, req: &ExecRequest) -> Result<ExecResponse, SandboxError> {
        if req.source.trim().is_empty() {
            return Err(SandboxError::InvalidRequest("source is empty".into()));
        }
        if req.timeout_s.is_nan() || req.timeout_s <= 0.0 {
            return Err(SandboxError::InvalidRequest(format!("timeout_s must be positive, got {}", req.timeout_s)));
        }
        if self.process.is_none() {
            self.process = Some(Process::spawn(&self.command)?);
        }
        let proc = self.process.as_mut().unwrap();
        let started = Instant::now();
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        if let Err(e) = proc.stdin.write_all(line.as_bytes()).and_then(|_| proc.stdin.flush()) {
            self.restart();
            return Ok(ExecResponse::local(&req.request_id, ExecStatus::RuntimeError, format!("worker stdin closed: {e}"), 0));
        }
        let deadline = Duration::from_secs_f64(req.timeout_s) + DEADLINE_GRACE;
        let elapsed = |s: Instant| s.elapsed().as_millis() as u64;
        match proc.lines.recv_timeout(deadline) {
            Ok(line) => match serde_json::from_str::<ExecResponse>(&line) {
                Ok(resp) if resp.request_id == req.request_id => Ok(resp),
                Ok(resp) => {
                    warn!(expected = %req.request_id, got = %resp.request_id, "sandbox response id mismatch");
                    self.restart();
                    Ok(ExecResponse::local(&req.request_id, ExecStatus::RuntimeError, "protocol desync: response id mismatch".into(), elapsed(started)))
                }
                Err(e) => {
                    warn!(error = %e, "unparseable sandbox response");
                    self.restart();
                    Ok(ExecResponse::local(&req.request_id, ExecStatus::RuntimeError, format!("protocol desync: {e}"), elapsed(started)))
                }
            },
            Err(RecvTimeoutError::Timeout) => {
                self.restart();
                Ok(ExecResponse::local(&req.request_id, ExecStatus::Timeout, "worker missed its deadline".into(), elapsed(started)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.restart();
                Ok(ExecResponse::local(&req.request_id, ExecStatus::RuntimeError, "worker exited".into(), elapsed(started)))
            }
        }
    }
}

impl Drop for SandboxWorker {
    fn drop(&mut self) {
        self.restart();
    }
}

/// A fixed set of lazily started workers shared by concurrent dispatchers.
pub struct SandboxPool {
    workers: Vec<Mutex<SandboxWorker>>,
    next: AtomicU64,
    ids: AtomicU64,
    label: String,
}

impl SandboxPool {
    pub fn new(command: WorkerCommand, size: usize) -> Self {
        let label = command.command.join(" ");
        let workers = (0..size.max(1)).map(|_| Mutex::new(SandboxWorker::new(command.clone()))).collect();
        Self { workers, next: AtomicU64::new(0), ids: AtomicU64::new(0), label }
    }

    pub fn next_request_id(&self) -> String {
        format!("req-{}", self.ids.fetch_add(1, Ordering::Relaxed) + 1)
    }

    pub fn execute(&self, req: &ExecRequest) -> Result<ExecResponse, SandboxError> {
        for w in &self.workers {
            if let Ok(mut guard) = w.try_lock() {
                return guard.execute(req);
            }
        }
        let i = self.next.fetch_add(1, Ordering::Relaxed) as usize % self.workers.len();
        let mut guard = self.workers[i].lock().unwrap_or_else(|p| p.into_inner());
        guard.execute(req)
    }
}

/// The `code` tool backed by a worker pool.
pub struct SandboxTool {
    pool: Arc<SandboxPool>,
    memory_mb: u64,
}

impl SandboxTool {
    pub fn new(pool: Arc<SandboxPool>, memory_mb: u64) -> Self {
        Self { pool, memory_mb }
    }
}

impl ToolBackend for SandboxTool {
    fn kind(&self) -> BackendKind {
        BackendKind::SandboxWorker
    }

    fn describe(&self) -> String {
        format!("sandbox:{}:{}MB", self.pool.label, self.memory_mb)
    }

    fn invoke(&self, call: ToolInvocation<'_>) -> Result<BackendOutput, String> {
        let source = call.args.get("source").and_then(Value::as_str).unwrap_or_default().to_string();
        let timeout_s = call.args.get("timeout_s").and_then(Value::as_f64).unwrap_or(DEFAULT_TIMEOUT_S);
        let req = ExecRequest { request_id: self.pool.next_request_id(), source, timeout_s, memory_mb: self.memory_mb };
        let resp = self.pool.execute(&req).map_err(|e| e.to_string())?;
        if resp.status != ExecStatus::Ok {
            let detail = resp.stderr.trim();
            return Err(if detail.is_empty() { format!("{:?}", resp.status) } else { format!("{:?}: {detail}", resp.status) });
        }
        let mut text = resp.stdout.clone();
        if !resp.stderr.trim().is_empty() {
            text.push_str("\n[stderr]\n");
            text.push_str(&resp.stderr);
        }
        let token_cost = count_tokens_fallback(&req.source) + count_tokens_fallback(&resp.stdout);
        Ok(BackendOutput { text, token_cost, duration_ms: Some(resp.duration_ms) })
    }
}
