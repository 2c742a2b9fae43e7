//! Backend dispatch: bounded-concurrency batch inference with retries and a
//! resumable line-delimited checkpoint.
//!
//! The wire contract is the de-facto chat-completions JSON shape. Nothing
//! here strips reasoning spans — raw generations are kept forensic and
//! extraction happens at scoring time.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::prompts::PromptInstance;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, initial_backoff_ms: 250 }
    }
}

/// Everything needed to talk to one model behind a chat-completions
/// endpoint. The bearer token is read from the environment variable named in
/// `api_key_env`, never stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub request_logprobs: bool,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    /// When set, the game-state context goes into a user message and only
    /// the instruction paragraphs stay in the system role.
    pub split_context_role: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: String::new(),
            model_name: String::new(),
            api_key_env: None,
            max_tokens: 2048,
            temperature: 0.0,
            request_logprobs: true,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            timeout_secs: 120,
            split_context_role: false,
        }
    }
}

/// One captured generation. `raw_text` may be empty — a failed request is
/// still a result so the batch never aborts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub instance_id: String,
    pub raw_text: String,
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: String,
    pub latency_ms: u64,
    pub model_name: String,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    /// Timeouts, connection failures, 429s, and 5xx responses; retried with
    /// exponential backoff within the budget.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Everything else; recorded as a failed result without retrying.
    #[error("permanent backend failure: {0}")]
    Permanent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// A single chat-completions call, already shaped for the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub instance_id: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: String,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

fn build_request(instance: &PromptInstance, cfg: &BackendConfig) -> ChatRequest {
    let messages = if cfg.split_context_role {
        vec![
            ChatMessage { role: "system".into(), content: instance.instruction_text().to_string() },
            ChatMessage { role: "user".into(), content: instance.context_text.clone() },
        ]
    } else {
        vec![ChatMessage { role: "system".into(), content: instance.system_text.clone() }]
    };
    ChatRequest {
        instance_id: instance.instance_id.clone(),
        model: cfg.model_name.clone(),
        messages,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        logprobs: cfg.request_logprobs,
    }
}

/// Runs one instance through the backend, retrying transient failures.
/// Errors that survive the retry budget become failed results with empty
/// text; the batch keeps going either way.
pub async fn generate(
    instance: &PromptInstance,
    cfg: &BackendConfig,
    backend: &dyn Backend,
) -> GenerationResult {
    let request = build_request(instance, cfg);
    let started = Instant::now();
    let mut attempt: u32 = 0;
    let outcome = loop {
        match backend.complete(&request).await {
            Ok(response) => break Ok(response),
            Err(BackendError::Transient(msg)) if attempt < cfg.retry.max_retries => {
                let backoff = cfg.retry.initial_backoff_ms.saturating_mul(1u64 << attempt.min(16));
                tracing::warn!(
                    instance_id = instance.instance_id,
                    attempt,
                    backoff_ms = backoff,
                    "transient failure, retrying: {msg}"
                );
                tokio::time::sleep(Duration::from_millis(backoff)).await;
                attempt += 1;
            }
            Err(err) => break Err(err),
        }
    };
    let latency_ms = started.elapsed().as_millis() as u64;
    match outcome {
        Ok(response) => GenerationResult {
            instance_id: instance.instance_id.clone(),
            raw_text: response.text,
            // Serving stacks occasionally report tiny positive logprobs;
            // clamp so downstream perplexity stays >= 1.
            token_logprobs: response
                .token_logprobs
                .map(|lps| lps.into_iter().map(|lp| lp.min(0.0)).collect()),
            finish_reason: response.finish_reason,
            latency_ms,
            model_name: cfg.model_name.clone(),
        },
        Err(err) => {
            tracing::warn!(instance_id = instance.instance_id, "request failed: {err}");
            GenerationResult {
                instance_id: instance.instance_id.clone(),
                raw_text: String::new(),
                token_logprobs: None,
                finish_reason: format!("error: {err}"),
                latency_ms,
                model_name: cfg.model_name.clone(),
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Reads completed results from a checkpoint file. Malformed lines (for
/// example a partial line from a killed run) are skipped with a warning.
pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, GenerationResult>, BatchError> {
    let mut completed = BTreeMap::new();
    if !path.exists() {
        return Ok(completed);
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<GenerationResult>(&line) {
            Ok(result) => {
                completed.insert(result.instance_id.clone(), result);
            }
            Err(err) => {
                tracing::warn!(line = idx + 1, %err, "skipping malformed checkpoint line");
            }
        }
    }
    Ok(completed)
}

/// Runs every instance, at most `max_in_flight` requests outstanding.
///
/// Completed results are appended (and flushed) to the checkpoint as they
/// finish; a restart skips instance ids already present. The returned list
/// covers all input instances, ordered by instance id — a pure function of
/// the ids, independent of completion order. Duplicate ids are served by a
/// single request.
pub async fn run_batch(
    instances: &[PromptInstance],
    cfg: &BackendConfig,
    backend: &dyn Backend,
    checkpoint: &Path,
) -> Result<Vec<GenerationResult>, BatchError> {
    let mut completed = load_checkpoint(checkpoint)?;
    let mut seen = HashSet::new();
    let pending: Vec<&PromptInstance> = instances
        .iter()
        .filter(|i| seen.insert(i.instance_id.clone()) && !completed.contains_key(&i.instance_id))
        .collect();
    tracing::info!(
        total = instances.len(),
        from_checkpoint = completed.len(),
        to_run = pending.len(),
        "starting batch"
    );

    if !pending.is_empty() {
        let file = OpenOptions::new().create(true).append(true).open(checkpoint)?;
        let writer = Mutex::new(BufWriter::new(file));
        let calls: Vec<_> = pending.into_iter().map(|inst| generate(inst, cfg, backend)).collect();
        let mut in_flight = stream::iter(calls).buffer_unordered(cfg.max_in_flight.max(1));
        while let Some(result) = in_flight.next().await {
            {
                let mut guard = writer.lock().expect("checkpoint writer poisoned");
                serde_json::to_writer(&mut *guard, &result)?;
                guard.write_all(b"\n")?;
                guard.flush()?;
            }
            completed.insert(result.instance_id.clone(), result);
        }
    }

    let mut results: Vec<GenerationResult> = instances
        .iter()
        .map(|i| completed.get(&i.instance_id).expect("every instance has a result").clone())
        .collect();
    results.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(results)
}

#[derive(Debug, thiserror::Error)]
pub enum BackendConfigError {
    #[error("base_url is empty")]
    MissingBaseUrl,
    #[error("base_url '{0}' is not an http(s) endpoint")]
    BadBaseUrl(String),
    #[error("model_name is empty")]
    MissingModel,
    #[error("temperature {0} is negative")]
    NegativeTemperature(f64),
    #[error("api key environment variable '{0}' is not set")]
    MissingApiKey(String),
    #[error("http client: {0}")]
    Client(String),
}

/// Chat-completions client over HTTP. Contract-level only — no vendor SDK.
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendConfigError> {
        if cfg.base_url.trim().is_empty() {
            return Err(BackendConfigError::MissingBaseUrl);
        }
        if !cfg.base_url.starts_with("http://") && !cfg.base_url.starts_with("https://") {
            return Err(BackendConfigError::BadBaseUrl(cfg.base_url.clone()));
        }
        if cfg.model_name.trim().is_empty() {
            return Err(BackendConfigError::MissingModel);
        }
        if cfg.temperature < 0.0 {
            return Err(BackendConfigError::NegativeTemperature(cfg.temperature));
        }
        let api_key = match &cfg.api_key_env {
            Some(var) if !var.is_empty() => Some(
                std::env::var(var).map_err(|_| BackendConfigError::MissingApiKey(var.clone()))?,
            ),
            _ => None,
        };
        let trimmed = cfg.base_url.trim_end_matches('/');
        let endpoint = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendConfigError::Client(e.to_string()))?;
        Ok(HttpBackend { client, endpoint, api_key })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Option<WireMessage>,
    finish_reason: Option<String>,
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    content: Option<Vec<WireTokenLogprob>>,
}

#[derive(Deserialize)]
struct WireTokenLogprob {
    logprob: f64,
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "logprobs": request.logprobs,
        });
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response =
            builder.send().await.map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("http {status}")));
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            let snippet: String = body.chars().take(200).collect();
            return Err(BackendError::Permanent(format!("http {status}: {snippet}")));
        }
        let wire: WireResponse =
            response.json().await.map_err(|e| BackendError::Permanent(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Permanent("response has no choices".into()))?;
        Ok(ChatResponse {
            text: choice.message.and_then(|m| m.content).unwrap_or_default(),
            token_logprobs: choice
                .logprobs
                .and_then(|l| l.content)
                .map(|tokens| tokens.into_iter().map(|t| t.logprob).collect()),
            finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
        })
    }
}

/// Offline stand-in for a model server. The echo-gold variant replies with
/// the record's gold command wrapped in `{{}}`, which makes a full pipeline
/// run deterministic and lets resume/idempotence behavior be tested without
/// a network.
pub struct MockBackend {
    replies: BTreeMap<String, String>,
    logprob_per_token: f64,
}

impl MockBackend {
    /// `replies` maps instance id → reply text.
    pub fn with_replies(replies: BTreeMap<String, String>) -> Self {
        MockBackend { replies, logprob_per_token: -0.05 }
    }

    /// Maps record ids to gold commands and echoes `{{<gold>}}` for every
    /// instance of that record.
    pub fn echo_gold(golds: impl IntoIterator<Item = (String, String)>, template_ids: &[u8]) -> Self {
        let mut replies = BTreeMap::new();
        for (record_id, gold) in golds {
            for tid in template_ids {
                replies.insert(format!("{record_id}:{tid}"), format!("{{{{{gold}}}}}"));
            }
        }
        MockBackend { replies, logprob_per_token: -0.05 }
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = self.replies.get(&request.instance_id).cloned().unwrap_or_default();
        let token_count = text.split_whitespace().count().max(1);
        Ok(ChatResponse {
            token_logprobs: request.logprobs.then(|| vec![self.logprob_per_token; token_count]),
            finish_reason: "stop".into(),
            text,
        })
    }
}
