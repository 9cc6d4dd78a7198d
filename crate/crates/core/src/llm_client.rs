//! Minimal blocking client for OpenAI-compatible `/v1/chat/completions`
//! endpoints: deterministic request bodies, bounded retries with
//! exponential backoff, and an in-flight request cap.

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::prompting::PromptTemplate;

pub const ENV_API_KEY: &str = "DEID_API_KEY";
pub const ENV_ENDPOINT: &str = "DEID_API_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

// Integral temperatures go on the wire as integers (`0`, not `0.0`).
fn serialize_temperature<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        s.serialize_i64(*t as i64)
    } else {
        s.serialize_f64(*t)
    }
}

/// Request body. Field order here is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(serialize_with = "serialize_temperature")]
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest { model: model.into(), messages, temperature: 0.0, max_tokens: None }
    }

    /// Compact JSON body, byte-stable for equal requests.
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serialization cannot fail")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    pub usage: Option<Usage>,
    /// Number of HTTP attempts made, including the successful one.
    pub attempts: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Parses a completion body and returns the first choice.
pub fn parse_response(body: &str) -> Result<(String, String, Option<Usage>), ClientError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| ClientError::Protocol(format!("unparseable body: {e}")))?;
    let choice =
        wire.choices.into_iter().next().ok_or_else(|| ClientError::Protocol("response has no choices".into()))?;
    let finish_reason = choice.finish_reason.unwrap_or_default();
    let content = match choice.message.content {
        Some(c) => c,
        None if finish_reason == "stop" => {
            return Err(ClientError::Protocol("finish_reason is stop but content is missing".into()))
        }
        None => String::new(),
    };
    let usage = wire.usage.map(|u| Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens });
    Ok((content, finish_reason, usage))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
    pub retryable_statuses: Vec<u16>,
    /// Whole-request timeout for one attempt.
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            retryable_statuses: vec![429, 500, 502, 503, 504],
            request_timeout: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based), without jitter.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_backoff.saturating_mul(factor).min(self.max_backoff)
    }

    /// `backoff(retry)` plus up to one `base_backoff` of random jitter.
    pub fn jittered_backoff(&self, retry: u32) -> Duration {
        let base = self.backoff(retry);
        let jitter_ms = self.base_backoff.as_millis() as u64;
        if jitter_ms == 0 {
            return base;
        }
        base + Duration::from_millis(rand::rng().random_range(0..jitter_ms))
    }

    pub fn is_retryable(&self, status: u16) -> bool {
        self.retryable_statuses.contains(&status)
    }
}

/// API key holder whose `Debug`/`Display` never reveal the key.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Result<Self, ClientError> {
        let key = key.into();
        if key.trim().is_empty() {
            return Err(ClientError::InvalidConfig("API key is empty".into()));
        }
        Ok(ApiKey(key))
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<hidden>)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("note is empty")]
    EmptyNote,
    #[error("invalid client configuration: {0}")]
    InvalidConfig(String),
}

/// `[system: rendered template, user: note]` at the given temperature
/// (default 0).
pub fn build_request(
    template: &PromptTemplate,
    note_text: &str,
    model: &str,
    temperature: Option<f64>,
) -> Result<ChatRequest, ClientError> {
    let prompt = template.render();
    if prompt.trim().is_empty() {
        return Err(ClientError::EmptyPrompt);
    }
    if note_text.trim().is_empty() {
        return Err(ClientError::EmptyNote);
    }
    let temperature = temperature.unwrap_or(0.0);
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(ClientError::InvalidConfig(format!("temperature must be >= 0, got {temperature}")));
    }
    Ok(ChatRequest {
        model: model.to_string(),
        messages: vec![ChatMessage::system(prompt), ChatMessage::user(note_text)],
        temperature,
        max_tokens: None,
    })
}

struct InflightGate {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InflightGate);

impl InflightGate {
    fn new(cap: usize) -> Self {
        InflightGate { cap: cap.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|p| p.into_inner());
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap_or_else(|p| p.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|p| p.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

enum AttemptError {
    Retry(String),
    Fatal(ClientError),
}

/// Shareable chat client. At most `inflight_cap` requests run at once.
pub struct ChatClient {
    url: String,
    api_key: ApiKey,
    policy: RetryPolicy,
    agent: ureq::Agent,
    gate: InflightGate,
}

impl fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatClient")
            .field("url", &self.url)
            .field("api_key", &self.api_key)
            .field("policy", &self.policy)
            .field("inflight_cap", &self.gate.cap)
            .finish()
    }
}

pub const DEFAULT_INFLIGHT_CAP: usize = 4;

impl ChatClient {
    pub fn new(endpoint: &str, api_key: ApiKey, policy: RetryPolicy) -> Result<Self, ClientError> {
        Self::with_inflight_cap(endpoint, api_key, policy, DEFAULT_INFLIGHT_CAP)
    }

    pub fn with_inflight_cap(
        endpoint: &str,
        api_key: ApiKey,
        policy: RetryPolicy,
        inflight_cap: usize,
    ) -> Result<Self, ClientError> {
        let endpoint = endpoint.trim().trim_end_matches('/');
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(ClientError::InvalidConfig(format!("endpoint is not an http(s) URL: {endpoint:?}")));
        }
        if policy.max_attempts == 0 {
            return Err(ClientError::InvalidConfig("max_attempts must be at least 1".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(policy.request_timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(ChatClient {
            url: format!("{endpoint}/v1/chat/completions"),
            api_key,
            policy,
            agent,
            gate: InflightGate::new(inflight_cap),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    fn attempt(&self, body: &[u8]) -> Result<ChatResponse, AttemptError> {
        let _permit = self.gate.acquire();
        let result = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key.expose()))
            .header("Content-Type", "application/json")
            .send(body);
        let mut resp = match result {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed)) => {
                return Err(AttemptError::Retry(e.to_string()))
            }
            Err(e) => return Err(AttemptError::Fatal(ClientError::Transport { attempts: 0, message: e.to_string() })),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {
                let text = resp.body_mut().read_to_string().map_err(|e| match e {
                    ureq::Error::Timeout(_) | ureq::Error::Io(_) => AttemptError::Retry(e.to_string()),
                    other => AttemptError::Fatal(ClientError::Protocol(other.to_string())),
                })?;
                let (content, finish_reason, usage) = parse_response(&text).map_err(AttemptError::Fatal)?;
                Ok(ChatResponse { content, finish_reason, usage, attempts: 0 })
            }
            401 | 403 => Err(AttemptError::Fatal(ClientError::Auth { status })),
            s if self.policy.is_retryable(s) => Err(AttemptError::Retry(format!("HTTP {s}"))),
            s => Err(AttemptError::Fatal(ClientError::Protocol(format!("unexpected HTTP status {s}")))),
        }
    }

    /// POSTs the request, retrying retryable failures per the policy.
    pub fn send(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let body = request.to_json();
        let mut last = String::new();
        for attempt in 1..=self.policy.max_attempts {
            match self.attempt(&body) {
                Ok(mut resp) => {
                    resp.attempts = attempt;
                    log::debug!("chat completion ok after {attempt} attempt(s)");
                    return Ok(resp);
                }
                Err(AttemptError::Fatal(ClientError::Transport { message, .. })) => {
                    return Err(ClientError::Transport { attempts: attempt, message })
                }
                Err(AttemptError::Fatal(e)) => {
                    log::warn!("chat completion failed on attempt {attempt}: {e}");
                    return Err(e);
                }
                Err(AttemptError::Retry(message)) => {
                    log::warn!("chat completion attempt {attempt}/{} failed: {message}", self.policy.max_attempts);
                    last = message;
                    if attempt < self.policy.max_attempts {
                        thread::sleep(self.policy.jittered_backoff(attempt));
                    }
                }
            }
        }
        Err(ClientError::Transport { attempts: self.policy.max_attempts, message: last })
    }
}

/// One-shot convenience over [`ChatClient`].
pub fn send_chat(
    endpoint: &str,
    api_key: &str,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<ChatResponse, ClientError> {
    ChatClient::new(endpoint, ApiKey::new(api_key)?, policy.clone())?.send(request)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::build_implicit_prompt;

    #[test]
    fn default_temperature_serializes_as_integer_zero() {
        let r = build_request(&build_implicit_prompt(), "Pt seen today.", "gpt-4", None).unwrap();
        let body = String::from_utf8(r.to_json()).unwrap();
        assert_eq!(
            body,
            r#"{"model":"gpt-4","messages":[{"role":"system","content":"Please anonymize the following clinical note."},{"role":"user","content":"Pt seen today."}],"temperature":0}"#
        );
        let mut r2 = r.clone();
        r2.temperature = 0.7;
        r2.max_tokens = Some(256);
        let body2 = String::from_utf8(r2.to_json()).unwrap();
        assert!(body2.ends_with(r#""temperature":0.7,"max_tokens":256}"#));
    }

    #[test]
    fn build_request_rejects_empty_inputs() {
        let t = build_implicit_prompt();
        assert_eq!(build_request(&t, "  ", "m", None), Err(ClientError::EmptyNote));
        let mut empty = t.clone();
        empty.task_statement = String::new();
        assert_eq!(build_request(&empty, "note", "m", None), Err(ClientError::EmptyPrompt));
        assert!(matches!(build_request(&t, "note", "m", Some(-1.0)), Err(ClientError::InvalidConfig(_))));
    }

    #[test]
    fn backoff_is_monotone_and_capped() {
        let p = RetryPolicy {
            base_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(1),
            ..Default::default()
        };
        let delays: Vec<_> = (1..=8).map(|i| p.backoff(i)).collect();
        assert_eq!(delays[0], Duration::from_millis(100));
        assert_eq!(delays[1], Duration::from_millis(200));
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*delays.last().unwrap(), Duration::from_secs(1));
        assert_eq!(p.backoff(200), Duration::from_secs(1));
        let j = p.jittered_backoff(2);
        assert!(j >= Duration::from_millis(200) && j < Duration::from_millis(300));
    }

    #[test]
    fn parse_first_choice_and_usage() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Mr. [redacted]"},"finish_reason":"stop"},{"message":{"content":"x"}}],"usage":{"prompt_tokens":12,"completion_tokens":3,"total_tokens":15}}"#;
        let (content, finish, usage) = parse_response(body).unwrap();
        assert_eq!(content, "Mr. [redacted]");
        assert_eq!(finish, "stop");
        assert_eq!(usage, Some(Usage { prompt_tokens: 12, completion_tokens: 3 }));
        assert!(matches!(parse_response("{\"choices\":[]}"), Err(ClientError::Protocol(_))));
        assert!(matches!(parse_response("<html>"), Err(ClientError::Protocol(_))));
    }

    #[test]
    fn key_is_hidden_in_debug() {
        let key = ApiKey::new("sk-secret-123").unwrap();
        assert!(!format!("{key:?}").contains("sk-secret"));
        let client = ChatClient::new("http://127.0.0.1:9", key, RetryPolicy::default()).unwrap();
        assert!(!format!("{client:?}").contains("sk-secret"));
        assert_eq!(client.url(), "http://127.0.0.1:9/v1/chat/completions");
        assert!(ApiKey::new(" ").is_err());
        assert!(ChatClient::new("ftp://x", ApiKey::new("k").unwrap(), RetryPolicy::default()).is_err());
    }
}
