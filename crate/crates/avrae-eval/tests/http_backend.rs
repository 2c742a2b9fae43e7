//! Exercises the chat-completions wire contract against a local HTTP server:
//! request shape, bearer auth, logprob capture, and the retry classification
//! of 429 / 5xx / 4xx responses.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};

use avrae_eval::inference::{generate, BackendConfig, HttpBackend, RetryPolicy};
use avrae_eval::prompts::PromptInstance;

#[derive(Clone, Default)]
struct ServerState {
    requests: Arc<AtomicUsize>,
    fail_first: Arc<AtomicUsize>,
    fail_status: u16,
    seen_auth: Arc<Mutex<Vec<Option<String>>>>,
    seen_bodies: Arc<Mutex<Vec<serde_json::Value>>>,
}

async fn completions(
    State(state): State<ServerState>,
    headers: HeaderMap,
    Json(body): Json<serde_json::Value>,
) -> (StatusCode, Json<serde_json::Value>) {
    let call = state.requests.fetch_add(1, Ordering::SeqCst);
    state.seen_auth.lock().unwrap().push(
        headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string),
    );
    state.seen_bodies.lock().unwrap().push(body);
    if call < state.fail_first.load(Ordering::SeqCst) {
        return (
            StatusCode::from_u16(state.fail_status).unwrap(),
            Json(serde_json::json!({"error": "injected failure"})),
        );
    }
    (
        StatusCode::OK,
        Json(serde_json::json!({
            "choices": [{
                "message": {"role": "assistant", "content": "{{!attack longbow -t WY1 adv}}"},
                "finish_reason": "stop",
                "logprobs": {"content": [
                    {"token": "a", "logprob": -0.1},
                    {"token": "b", "logprob": -0.2}
                ]}
            }]
        })),
    )
}

async fn spawn_server(state: ServerState) -> SocketAddr {
    let app = Router::new().route("/v1/chat/completions", post(completions)).with_state(state);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    addr
}

fn instance() -> PromptInstance {
    PromptInstance {
        instance_id: "r1:1".into(),
        record_id: "r1".into(),
        template_id: 1,
        system_text: "state\n\ninstruction".into(),
        context_text: "state".into(),
    }
}

fn config(addr: SocketAddr) -> BackendConfig {
    BackendConfig {
        base_url: format!("http://{addr}/v1"),
        model_name: "llama-test".into(),
        retry: RetryPolicy { max_retries: 3, initial_backoff_ms: 1 },
        ..BackendConfig::default()
    }
}

#[tokio::test]
async fn happy_path_captures_text_and_logprobs() {
    let state = ServerState::default();
    let addr = spawn_server(state.clone()).await;
    let cfg = config(addr);
    let backend = HttpBackend::new(&cfg).unwrap();

    let result = generate(&instance(), &cfg, &backend).await;
    assert_eq!(result.raw_text, "{{!attack longbow -t WY1 adv}}");
    assert_eq!(result.token_logprobs, Some(vec![-0.1, -0.2]));
    assert_eq!(result.finish_reason, "stop");
    assert_eq!(result.model_name, "llama-test");

    let bodies = state.seen_bodies.lock().unwrap();
    assert_eq!(bodies[0]["model"], "llama-test");
    assert_eq!(bodies[0]["messages"][0]["role"], "system");
    assert_eq!(bodies[0]["logprobs"], true);
    assert_eq!(bodies[0]["temperature"], 0.0);
    let auth = state.seen_auth.lock().unwrap();
    assert_eq!(auth[0], None, "no bearer header without an api key");
}

#[tokio::test]
async fn bearer_token_read_from_environment() {
    let state = ServerState::default();
    let addr = spawn_server(state.clone()).await;
    std::env::set_var("AVRAE_EVAL_TEST_KEY_A", "sekrit");
    let mut cfg = config(addr);
    cfg.api_key_env = Some("AVRAE_EVAL_TEST_KEY_A".into());
    let backend = HttpBackend::new(&cfg).unwrap();

    generate(&instance(), &cfg, &backend).await;
    let auth = state.seen_auth.lock().unwrap();
    assert_eq!(auth[0].as_deref(), Some("Bearer sekrit"));
}

#[tokio::test]
async fn missing_api_key_is_a_config_error() {
    let mut cfg = config("127.0.0.1:9".parse().unwrap());
    cfg.api_key_env = Some("AVRAE_EVAL_TEST_KEY_UNSET".into());
    assert!(HttpBackend::new(&cfg).is_err());
}

#[tokio::test]
async fn rate_limit_is_retried_until_success() {
    let state = ServerState {
        fail_first: Arc::new(AtomicUsize::new(2)),
        fail_status: 429,
        ..ServerState::default()
    };
    let addr = spawn_server(state.clone()).await;
    let cfg = config(addr);
    let backend = HttpBackend::new(&cfg).unwrap();

    let result = generate(&instance(), &cfg, &backend).await;
    assert_eq!(state.requests.load(Ordering::SeqCst), 3, "two 429s then success");
    assert_eq!(result.raw_text, "{{!attack longbow -t WY1 adv}}");
}

#[tokio::test]
async fn server_error_retries_then_fails_gracefully() {
    let state = ServerState {
        fail_first: Arc::new(AtomicUsize::new(99)),
        fail_status: 503,
        ..ServerState::default()
    };
    let addr = spawn_server(state.clone()).await;
    let cfg = config(addr);
    let backend = HttpBackend::new(&cfg).unwrap();

    let result = generate(&instance(), &cfg, &backend).await;
    assert_eq!(state.requests.load(Ordering::SeqCst), 4, "initial try plus three retries");
    assert!(result.raw_text.is_empty());
    assert!(result.finish_reason.starts_with("error:"));
}

#[tokio::test]
async fn client_error_is_permanent() {
    let state = ServerState {
        fail_first: Arc::new(AtomicUsize::new(99)),
        fail_status: 400,
        ..ServerState::default()
    };
    let addr = spawn_server(state.clone()).await;
    let cfg = config(addr);
    let backend = HttpBackend::new(&cfg).unwrap();

    let result = generate(&instance(), &cfg, &backend).await;
    assert_eq!(state.requests.load(Ordering::SeqCst), 1, "4xx must not retry");
    assert!(result.raw_text.is_empty());
    assert!(result.finish_reason.contains("http 400"));
}

#[test]
fn endpoint_join_rules() {
    for (base, ok) in [
        ("http://host:1/v1", true),
        ("http://host:1/v1/", true),
        ("http://host:1/v1/chat/completions", true),
        ("ftp://host", false),
        ("", false),
    ] {
        let cfg = BackendConfig {
            base_url: base.into(),
            model_name: "m".into(),
            ..BackendConfig::default()
        };
        assert_eq!(HttpBackend::new(&cfg).is_ok(), ok, "base_url {base:?}");
    }
}
