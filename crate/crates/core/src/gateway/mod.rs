//! Chat-completions client with bounded retries, an in-flight request budget, and
//! digest-keyed record/replay so that tests never need a network.

use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

mod recording;

pub use recording::{Recording, RecordingError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            messages,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Hex sha256 over the canonical JSON of the model name and request.
    pub fn digest(&self, model: &str) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            model: &'a str,
            messages: &'a [ChatMessage],
            temperature: f64,
            max_tokens: u32,
        }
        let canonical = serde_json::to_vec(&Canonical {
            model,
            messages: &self.messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        })
        .expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// One request/response pair as persisted in a recording file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub digest: String,
    pub model: String,
    pub request: ChatRequest,
    pub response: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Replay { recording: PathBuf },
    Record { recording: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model_name: String,
    pub auth_token_env_var: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub concurrency_budget: usize,
    pub mode: GatewayMode,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "default".into(),
            auth_token_env_var: "TRAJAUDIT_API_TOKEN".into(),
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_base_ms: 500,
            concurrency_budget: 4,
            mode: GatewayMode::Live,
        }
    }
}

impl GatewayConfig {
    pub fn replay(recording: impl Into<PathBuf>) -> Self {
        GatewayConfig {
            mode: GatewayMode::Replay {
                recording: recording.into(),
            },
            ..GatewayConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.concurrency_budget == 0 {
            return Err(GatewayError::Config("concurrency_budget must be at least 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(GatewayError::Config("model_name must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("no recorded response for request digest {digest}")]
    MissingRecording { digest: String },
    #[error("endpoint answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Recording(#[from] RecordingError),
}

/// Anything that turns a chat request into response text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

/// Delay before retry `attempt` (0-based): `base * 2^attempt`.
pub fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX))
}

/// Counting semaphore bounding in-flight requests.
struct Budget {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Budget);

impl Budget {
    fn new(limit: usize) -> Self {
        Budget {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit,
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(GatewayError),
    Fatal(GatewayError),
}

pub struct Gateway {
    config: GatewayConfig,
    budget: Budget,
    recording: Option<Recording>,
    agent: Option<ureq::Agent>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds a gateway. Replay mode loads the recording up front and never creates an HTTP
    /// agent.
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let (recording, agent) = match &config.mode {
            GatewayMode::Live => (None, Some(Self::agent(&config))),
            GatewayMode::Replay { recording } => (Some(Recording::open(recording)?), None),
            GatewayMode::Record { recording } => (
                Some(Recording::open_or_create(recording)?),
                Some(Self::agent(&config)),
            ),
        };
        Ok(Gateway {
            budget: Budget::new(config.concurrency_budget),
            config,
            recording,
            agent,
        })
    }

    fn agent(config: &GatewayConfig) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn chat_complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let digest = request.digest(&self.config.model_name);
        match &self.config.mode {
            GatewayMode::Replay { .. } => {
                let rec = self.recording.as_ref().expect("replay mode has a recording");
                rec.get(&digest)
                    .map(|x| x.response)
                    .ok_or(GatewayError::MissingRecording { digest })
            }
            GatewayMode::Live => self.live(request).map(|(text, _, _)| text),
            GatewayMode::Record { .. } => {
                let (response, latency, attempts) = self.live(request)?;
                let rec = self.recording.as_ref().expect("record mode has a recording");
                rec.append(ChatExchange {
                    digest,
                    model: self.config.model_name.clone(),
                    request: request.clone(),
                    response: response.clone(),
                    latency_ms: latency.as_millis() as u64,
                    attempt_count: attempts,
                })?;
                Ok(response)
            }
        }
    }

    fn live(&self, request: &ChatRequest) -> Result<(String, Duration, u32), GatewayError> {
        let _permit = self.budget.acquire();
        let started = Instant::now();
        let base = Duration::from_millis(self.config.backoff_base_ms);
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(request, attempt) {
                Attempt::Done(text) => return Ok((text, started.elapsed(), attempt)),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempt >= max_attempts => return Err(e),
                Attempt::Retry(e) => {
                    let delay = backoff_delay(base, attempt - 1);
                    tracing::debug!(attempt, ?delay, error = %e, "retrying chat request");
                    thread::sleep(delay);
                }
            }
        }
    }

    fn attempt(&self, request: &ChatRequest, attempt: u32) -> Attempt {
        let agent = self.agent.as_ref().expect("live modes have an agent");
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.config.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Ok(token) = std::env::var(&self.config.auth_token_env_var) {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = match req.send_json(&body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(GatewayError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(GatewayError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
        };
        match status {
            200..=299 => match extract_content(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fatal(e),
            },
            429 => Attempt::Retry(GatewayError::RateLimited { attempts: attempt }),
            500..=599 => Attempt::Retry(GatewayError::Transport {
                attempts: attempt,
                message: format!("server error {status}"),
            }),
            _ => Attempt::Fatal(GatewayError::Status { status, body: text }),
        }
    }
}

impl ChatBackend for Gateway {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.chat_complete(request)
    }
}

fn extract_content(body: &str) -> Result<String, GatewayError> {
    #[derive(Deserialize)]
    struct Completion {
        choices: Vec<Choice>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: ChatMessage,
    }
    let parsed: Completion =
        serde_json::from_str(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| GatewayError::Protocol("no choices".into()))
}
