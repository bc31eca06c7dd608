//! Chat-completion client used by the VLM extraction backends and by
//! instruction enrichment.
//!
//! Requests use the widely deployed hosted chat-completion JSON format: a
//! `messages` list whose `content` is either a plain string or a list of
//! typed parts, with images attached as base64 `data:` URLs.

use std::num::NonZeroU32;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("OCR adapter failed: {0}")]
    Adapter(String),
    #[error("no oracle extraction for image `{0}`")]
    NotInOracle(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("reading image `{path}`: {source}")]
    Image {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: MessageContent,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: MessageContent::Text(text.into()),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: MessageContent::Text(text.into()),
        }
    }

    /// A user turn carrying a text prompt followed by one image.
    pub fn user_with_image(text: impl Into<String>, data_url: String) -> Self {
        ChatMessage {
            role: Role::User,
            content: MessageContent::Parts(vec![
                ContentPart::Text { text: text.into() },
                ContentPart::ImageUrl {
                    image_url: ImageUrl { url: data_url },
                },
            ]),
        }
    }

    /// Concatenated text of the message, ignoring image parts.
    pub fn text(&self) -> String {
        match &self.content {
            MessageContent::Text(t) => t.clone(),
            MessageContent::Parts(parts) => parts
                .iter()
                .filter_map(|p| match p {
                    ContentPart::Text { text } => Some(text.as_str()),
                    ContentPart::ImageUrl { .. } => None,
                })
                .collect::<Vec<_>>()
                .join(""),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub content: String,
    pub retries_used: u32,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, messages: Vec<ChatMessage>) -> Result<ChatReply, BackendError>;
}

#[derive(Debug, Clone)]
pub struct ChatConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub timeout: Duration,
    /// First retry delay; doubles on every further retry.
    pub backoff_base: Duration,
    /// Requests are spaced evenly, no bursts.
    pub requests_per_minute: Option<NonZeroU32>,
    /// Omitted from the request body when `None`.
    pub temperature: Option<f32>,
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        ChatConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            max_retries: 3,
            max_concurrency: 4,
            timeout: Duration::from_secs(60),
            backoff_base: Duration::from_secs(1),
            requests_per_minute: None,
            temperature: Some(0.0),
        }
    }
}

/// HTTP chat-completion client with bounded concurrency, optional
/// requests-per-minute limiting and exponential backoff on 429, 5xx and
/// transport timeouts.
pub struct ChatClient {
    http: reqwest::Client,
    config: ChatConfig,
    in_flight: Arc<Semaphore>,
    limiter: Option<DefaultDirectRateLimiter>,
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f32>,
}

enum Attempt {
    Done(String),
    Retry(String),
}

impl ChatClient {
    pub fn new(config: ChatConfig) -> Result<Self, BackendError> {
        if config.api_key.trim().is_empty() {
            return Err(BackendError::Auth("API key is empty".into()));
        }
        if config.max_concurrency == 0 {
            return Err(BackendError::Config("max_concurrency must be at least 1".into()));
        }
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let limiter = config
            .requests_per_minute
            .map(|rpm| RateLimiter::direct(Quota::per_minute(rpm).allow_burst(NonZeroU32::MIN)));
        Ok(ChatClient {
            http,
            in_flight: Arc::new(Semaphore::new(config.max_concurrency)),
            limiter,
            config,
        })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    async fn attempt(&self, body: &RequestBody<'_>) -> Result<Attempt, BackendError> {
        if let Some(limiter) = &self.limiter {
            limiter.until_ready().await;
        }
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");

        let sent = self
            .http
            .post(&self.config.endpoint)
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .await;
        let response = match sent {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Ok(Attempt::Retry(e.to_string()))
            }
            Err(e) => {
                return Err(BackendError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                })
            }
        };

        let status = response.status();
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(BackendError::Auth(format!("HTTP {}: {}", status.as_u16(), text)));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Ok(Attempt::Retry(format!("HTTP {}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        Ok(Attempt::Done(text))
    }
}

#[async_trait]
impl ChatBackend for ChatClient {
    async fn complete(&self, messages: Vec<ChatMessage>) -> Result<ChatReply, BackendError> {
        let body = RequestBody {
            model: &self.config.model,
            messages: &messages,
            temperature: self.config.temperature,
        };
        let mut retries = 0u32;
        loop {
            match self.attempt(&body).await? {
                Attempt::Done(text) => {
                    let content = reply_content(&text)?;
                    return Ok(ChatReply {
                        content,
                        retries_used: retries,
                    });
                }
                Attempt::Retry(message) => {
                    if retries >= self.config.max_retries {
                        return Err(BackendError::Transport {
                            attempts: retries + 1,
                            message,
                        });
                    }
                    tokio::time::sleep(self.config.backoff_base * 2u32.pow(retries)).await;
                    retries += 1;
                }
            }
        }
    }
}

/// Pulls `choices[0].message.content` out of a response document.
fn reply_content(body: &str) -> Result<String, BackendError> {
    let doc: Value = serde_json::from_str(body).map_err(|e| BackendError::Transport {
        attempts: 1,
        message: format!("malformed response body: {e}"),
    })?;
    let content = &doc["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    };
    if text.trim().is_empty() {
        return Err(BackendError::EmptyResponse);
    }
    Ok(text)
}
