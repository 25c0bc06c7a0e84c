//! HTTP adapters for chat, embedding and rewriter services.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatBackend, EmbedBackend, EmbeddingVector, PreparedRequest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

enum Failure {
    Transient(String),
    Fatal(Error),
}

/// Minimal JSON-over-HTTP client shared by the live backends.
#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpClient {
    pub fn new(api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            api_key,
            retry,
        }
    }

    fn attempt<T: Serialize, R: for<'de> Deserialize<'de>>(&self, url: &str, body: &T) -> Result<R, Failure> {
        let mut req = self.agent.post(url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Err(Failure::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            return resp
                .body_mut()
                .read_json::<R>()
                .map_err(|e| Failure::Fatal(Error::Backend(format!("{url}: malformed response body: {e}"))));
        }
        let detail = resp.body_mut().read_to_string().unwrap_or_default();
        let msg = format!("{url}: HTTP {status} {}", detail.trim());
        match status {
            401 | 403 => Err(Failure::Fatal(Error::Auth(msg))),
            408 | 429 | 500..=599 => Err(Failure::Transient(msg)),
            _ => Err(Failure::Fatal(Error::Transport(msg))),
        }
    }

    /// POSTs `body` as JSON, retrying transient failures (connection errors,
    /// 408, 429, 5xx) with exponential backoff. Authentication failures and
    /// other client errors are returned immediately.
    pub fn post_json<T: Serialize, R: for<'de> Deserialize<'de>>(&self, url: &str, body: &T) -> Result<R> {
        let mut attempt = 0u32;
        loop {
            match self.attempt(url, body) {
                Ok(r) => {
                    if attempt > 0 {
                        log::info!("{url}: succeeded after {attempt} retries");
                    }
                    return Ok(r);
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    if attempt >= self.retry.max_retries {
                        return Err(Error::Transport(format!(
                            "{msg} (gave up after {} attempts)",
                            attempt + 1
                        )));
                    }
                    let delay = self.retry.base_delay * 2u32.saturating_pow(attempt);
                    attempt += 1;
                    log::warn!("{msg}; retry {attempt}/{} in {delay:?}", self.retry.max_retries);
                    thread::sleep(delay);
                }
            }
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

pub struct LiveChat {
    pub url: String,
    pub model: String,
    client: HttpClient,
}

impl LiveChat {
    pub fn new(url: impl Into<String>, model: impl Into<String>, client: HttpClient) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            client,
        }
    }
}

impl ChatBackend for LiveChat {
    fn chat(&self, req: &PreparedRequest<'_>) -> Result<String> {
        let body = ChatBody {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &req.prompt,
            }],
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        };
        let reply: ChatReply = self.client.post_json(&self.url, &body)?;
        Ok(reply.content)
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

pub struct LiveEmbedder {
    pub url: String,
    client: HttpClient,
}

impl LiveEmbedder {
    pub fn new(url: impl Into<String>, client: HttpClient) -> Self {
        Self {
            url: url.into(),
            client,
        }
    }
}

impl EmbedBackend for LiveEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let reply: EmbedReply = self.client.post_json(&self.url, &EmbedBody { texts })?;
        if reply.vectors.iter().any(|v| v.len() != reply.dim) {
            return Err(Error::Backend(format!(
                "{}: vectors disagree with reported dim {}",
                self.url, reply.dim
            )));
        }
        Ok(reply
            .vectors
            .into_iter()
            .map(|values| EmbeddingVector { values })
            .collect())
    }
}

#[derive(Serialize)]
struct RewriteBody<'a> {
    input: &'a str,
    max_tokens: u32,
}

/// Client for a served question rewriter: `{input, max_tokens}` → `{output}`.
pub struct HttpRewriter {
    pub url: String,
    pub max_tokens: u32,
    client: HttpClient,
}

impl HttpRewriter {
    pub fn new(url: impl Into<String>, max_tokens: u32, client: HttpClient) -> Self {
        Self {
            url: url.into(),
            max_tokens,
            client,
        }
    }
}

impl crate::rewrite::Rewriter for HttpRewriter {
    fn generate(&self, input: &str) -> Result<String> {
        let reply: Value = self.client.post_json(
            &self.url,
            &RewriteBody {
                input,
                max_tokens: self.max_tokens,
            },
        )?;
        reply
            .get("output")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Backend(format!("{}: response lacks string `output`", self.url)))
    }
}
