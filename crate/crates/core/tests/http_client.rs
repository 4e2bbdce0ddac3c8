//! Chat-completions client against an in-process mock endpoint.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use diagent_core::agent::{Agent, AgentConfig, BenchmarkItem, Difficulty, Timing, TraceStatus};
use diagent_core::model::{
    ChatTurn, HttpModelClient, HttpModelConfig, ModelClient, ModelError, ModelParams, RetryPolicy, Retrying,
};
use diagent_core::tools::ToolRegistry;

#[derive(Default)]
struct Mock {
    hits: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
    auth: Mutex<Vec<Option<String>>>,
}

type Shared = Arc<Mock>;

fn record(m: &Mock, headers: &HeaderMap, body: Value) -> usize {
    m.bodies.lock().unwrap().push(body);
    m.auth.lock().unwrap().push(headers.get("authorization").map(|h| h.to_str().unwrap().to_string()));
    m.hits.fetch_add(1, Ordering::SeqCst)
}

fn completion(text: &str) -> Value {
    json!({
        "choices": [{ "message": { "role": "assistant", "content": text } }],
        "usage": { "prompt_tokens": 31, "completion_tokens": 7 }
    })
}

async fn ok(State(m): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
    record(&m, &headers, body);
    Json(completion("FINAL ANSWER: B"))
}

async fn unauthorized(State(m): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, String) {
    record(&m, &headers, body);
    (StatusCode::UNAUTHORIZED, "bad key".into())
}

async fn flaky(State(m): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if record(&m, &headers, body) < 2 {
        (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "overloaded"})))
    } else {
        (StatusCode::OK, Json(completion("recovered")))
    }
}

async fn down(State(m): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> StatusCode {
    record(&m, &headers, body);
    StatusCode::SERVICE_UNAVAILABLE
}

async fn no_usage(State(m): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
    record(&m, &headers, body);
    Json(json!({ "choices": [{ "message": { "content": "FINAL ANSWER: B" } }] }))
}

async fn bad_request(State(m): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> StatusCode {
    record(&m, &headers, body);
    StatusCode::BAD_REQUEST
}

/// Serves the mock on an ephemeral port from a background runtime.
fn serve() -> (SocketAddr, Shared) {
    let mock: Shared = Arc::default();
    let app = Router::new()
        .route("/ok/v1/chat/completions", post(ok))
        .route("/auth/v1/chat/completions", post(unauthorized))
        .route("/flaky/v1/chat/completions", post(flaky))
        .route("/down/v1/chat/completions", post(down))
        .route("/nousage/v1/chat/completions", post(no_usage))
        .route("/bad/v1/chat/completions", post(bad_request))
        .with_state(mock.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), mock)
}

fn client(addr: SocketAddr, route: &str, key_env: Option<&str>) -> HttpModelClient {
    HttpModelClient::new(&HttpModelConfig {
        endpoint: format!("http://{addr}/{route}/v1"),
        model: "test-vlm".into(),
        api_key_env: key_env.map(Into::into),
        timeout_s: 5,
    })
    .unwrap()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { max_retries: 2, base_delay: Duration::from_millis(5) }
}

fn convo() -> Vec<ChatTurn> {
    vec![ChatTurn::system("sys"), ChatTurn::user("What is shown?")]
}

#[test]
fn captures_text_and_usage() {
    let (addr, mock) = serve();
    std::env::set_var("DIAGENT_HTTP_TEST_KEY", "sk-test");
    let c = client(addr, "ok", Some("DIAGENT_HTTP_TEST_KEY"));
    let r = c.complete(&convo(), &ModelParams { temperature: 0.2, max_tokens: 64, seed: 3 }).unwrap();
    assert_eq!(r.text, "FINAL ANSWER: B");
    assert_eq!((r.prompt_tokens, r.completion_tokens), (Some(31), Some(7)));
    assert_eq!(r.output_tokens(), (7, false));

    let body = mock.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "test-vlm");
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["seed"], 3);
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "sys"}));
    assert_eq!(mock.auth.lock().unwrap()[0].as_deref(), Some("Bearer sk-test"));
}

#[test]
fn auth_failure_is_not_retried() {
    let (addr, mock) = serve();
    let c = Retrying::new(client(addr, "auth", None), fast_retry());
    let err = c.complete(&convo(), &ModelParams::default()).unwrap_err();
    assert!(matches!(err, ModelError::Auth(_)), "{err:?}");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried() {
    let (addr, mock) = serve();
    let c = Retrying::new(client(addr, "flaky", None), fast_retry());
    assert_eq!(c.complete(&convo(), &ModelParams::default()).unwrap().text, "recovered");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let (addr, mock) = serve();
    let c = Retrying::new(client(addr, "down", None), fast_retry());
    assert!(matches!(c.complete(&convo(), &ModelParams::default()), Err(ModelError::Transport(_))));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_invalid_requests() {
    let (addr, mock) = serve();
    let c = Retrying::new(client(addr, "bad", None), fast_retry());
    assert!(matches!(c.complete(&convo(), &ModelParams::default()), Err(ModelError::InvalidRequest(_))));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = client(addr, "ok", None).complete(&convo(), &ModelParams::default()).unwrap_err();
    assert!(matches!(err, ModelError::Transport(_)));
}

fn item() -> BenchmarkItem {
    BenchmarkItem {
        id: "h1".into(),
        dataset: "MMMU".into(),
        question: "Which bar is taller?".into(),
        image_ref: "chart.png".into(),
        choices: Some(vec![("A".into(), "left".into()), ("B".into(), "right".into())]),
        gold_answer: "B".into(),
        difficulty: Difficulty::Easy,
    }
}

#[test]
fn agent_runs_over_http_with_inline_image() {
    let (addr, mock) = serve();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chart.png"), b"\x89PNG fake").unwrap();
    let c = client(addr, "ok", None).with_image_root(dir.path());
    let cfg = AgentConfig { enabled_tools: Default::default(), timing: Timing::Accounted, ..AgentConfig::default() };
    let agent = Agent::new(&cfg, &ToolRegistry::new()).unwrap();
    let r = agent.run_item(&item(), &c).unwrap();
    assert_eq!(r.status(), TraceStatus::Completed);
    assert!(r.correct);
    assert_eq!(r.total_tokens(), 7);
    assert!(!r.approx_tokens);
    let body = mock.bodies.lock().unwrap()[0].clone();
    let url = body["messages"][1]["content"][1]["image_url"]["url"].as_str().unwrap();
    assert!(url.starts_with("data:image/png;base64,"), "{url}");
}

#[test]
fn missing_usage_falls_back_to_approximation() {
    let (addr, _mock) = serve();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chart.png"), b"x").unwrap();
    let c = client(addr, "nousage", None).with_image_root(dir.path());
    let cfg = AgentConfig { enabled_tools: Default::default(), ..AgentConfig::default() };
    let agent = Agent::new(&cfg, &ToolRegistry::new()).unwrap();
    let r = agent.run_item(&item(), &c).unwrap();
    assert!(r.approx_tokens);
    assert_eq!(r.total_tokens(), "FINAL ANSWER: B".len().div_ceil(4) as u64);
}

#[test]
fn transport_failure_yields_error_record() {
    let (addr, _mock) = serve();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chart.png"), b"x").unwrap();
    let c = Retrying::new(client(addr, "down", None).with_image_root(dir.path()), fast_retry());
    let cfg = AgentConfig { enabled_tools: Default::default(), ..AgentConfig::default() };
    let agent = Agent::new(&cfg, &ToolRegistry::new()).unwrap();
    let r = agent.run_item(&item(), &c).unwrap();
    assert_eq!(r.status(), TraceStatus::Error);
    assert!(!r.correct);
    assert!(r.error.is_some());
}
