//! Chat-completions client with bounded retries and an in-flight cap.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{renormalize, Backend, BackendRequest, BackendResponse, Label, PriceTable, Usage};
use crate::error::{Error, Result};

fn default_path() -> String {
    "/v1/chat/completions".into()
}
fn default_parallelism() -> usize {
    4
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_backoff_max_ms() -> u64 {
    8_000
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_top_logprobs() -> u8 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL, e.g. `https://api.openai.com`.
    pub endpoint: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model: String,
    /// Resolved key; configs carry only the variable name.
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub want_probabilities: bool,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u8,
    #[serde(default)]
    pub price: PriceTable,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            path: default_path(),
            model: model.into(),
            api_key: None,
            parallelism: default_parallelism(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            backoff_max_ms: default_backoff_max_ms(),
            timeout_secs: default_timeout_secs(),
            want_probabilities: false,
            top_logprobs: default_top_logprobs(),
            price: PriceTable::default(),
        }
    }

    pub fn url(&self) -> String {
        format!(
            "{}/{}",
            self.endpoint.trim_end_matches('/'),
            self.path.trim_start_matches('/')
        )
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    slots: Semaphore,
}

enum Attempt {
    Done(BackendResponse),
    Retry(String),
}

fn is_retryable(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let slots = Semaphore::new(config.parallelism);
        Self {
            config,
            agent,
            slots,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// JSON body for a request. Key order is fixed so identical requests
    /// serialize to identical bytes.
    pub fn request_body(&self, request: &BackendRequest) -> Value {
        let mut body = json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "temperature": request.temperature(),
        });
        if request.want_probabilities {
            body["logprobs"] = Value::Bool(true);
            body["top_logprobs"] = Value::from(self.config.top_logprobs);
        }
        body
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .config
            .backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.config.backoff_max_ms);
        Duration::from_millis(ms)
    }

    fn attempt(&self, body: &Value, request: &BackendRequest) -> Result<Attempt> {
        let mut req = self.agent.post(self.config.url());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if status >= 400 {
            if is_retryable(status) {
                return Ok(Attempt::Retry(format!("status {status}: {text}")));
            }
            return Err(Error::HttpStatus { status, body: text });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::MalformedResponse(format!("{e}: {text}")))?;
        parse_completion(&value, request).map(Attempt::Done)
    }
}

/// Extracts content, usage and (if present) first-label probabilities from a
/// chat-completions response.
pub(crate) fn parse_completion(value: &Value, request: &BackendRequest) -> Result<BackendResponse> {
    let choice = value
        .pointer("/choices/0")
        .ok_or_else(|| Error::MalformedResponse("no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::MalformedResponse("no message content".into()))?
        .to_string();
    let usage = value.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    let label_probs = if request.want_probabilities {
        choice
            .pointer("/logprobs/content")
            .and_then(Value::as_array)
            .and_then(|tokens| label_probs(tokens, request))
    } else {
        None
    };
    Ok(BackendResponse {
        text,
        label_probs,
        usage,
    })
}

fn label_probs(tokens: &[Value], request: &BackendRequest) -> Option<BTreeMap<Label, f64>> {
    let expected = request.prompt.expected;
    // first generated token that is itself a label
    let entry = tokens.iter().find(|t| {
        t.get("token")
            .and_then(Value::as_str)
            .is_some_and(|tok| expected.label_for_token(tok).is_some())
    })?;
    let mut probs = BTreeMap::new();
    for alt in entry.get("top_logprobs")?.as_array()? {
        let (Some(tok), Some(lp)) = (
            alt.get("token").and_then(Value::as_str),
            alt.get("logprob").and_then(Value::as_f64),
        ) else {
            continue;
        };
        if let Some(label) = expected.label_for_token(tok) {
            *probs.entry(label).or_insert(0.0) += lp.exp();
        }
    }
    renormalize(&probs, &expected.labels())
}

impl Backend for HttpBackend {
    fn model_name(&self) -> &str {
        &self.config.model
    }

    fn wants_probabilities(&self) -> bool {
        self.config.want_probabilities
    }

    fn price(&self) -> PriceTable {
        self.config.price
    }

    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse> {
        let body = self.request_body(request);
        let _permit = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let wait = self.backoff(attempt - 1);
                debug!("retrying {} in {wait:?} after: {last}", request.task_id);
                std::thread::sleep(wait);
            }
            match self.attempt(&body, request)? {
                Attempt::Done(r) => return Ok(r),
                Attempt::Retry(why) => {
                    warn!("task {}: transient failure: {why}", request.task_id);
                    last = why;
                }
            }
        }
        Err(Error::RetriesExhausted {
            attempts: self.config.max_retries + 1,
            last,
        })
    }
}
