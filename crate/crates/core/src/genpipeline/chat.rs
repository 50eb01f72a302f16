use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{self, HttpError, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
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

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// One chat-completion call. `n` asks for that many independent choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    #[serde(default = "one")]
    pub n: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("CHAT_API_KEY is not set; export it or use the offline mock backend")]
    MissingApiKey,
    #[error("{0}")]
    Unavailable(String),
    #[error("unexpected chat reply: {0}")]
    Protocol(String),
}

/// A chat-completion backend. Implementations must be shareable across the
/// generation worker threads.
pub trait ChatClient: Send + Sync {
    /// Returns the content of each choice, in order.
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, ChatError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, ChatError> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for std::sync::Arc<C> {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, ChatError> {
        (**self).complete(request)
    }
}

pub const DEFAULT_CHAT_BASE: &str = "https://api.openai.com/v1";

/// OpenAI-compatible `POST {base}/chat/completions` client.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    base_url: String,
    api_key: String,
    policy: RetryPolicy,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self::with_policy(base_url, api_key, RetryPolicy::default())
    }

    pub fn with_policy(base_url: impl Into<String>, api_key: impl Into<String>, policy: RetryPolicy) -> Self {
        HttpChatClient {
            base_url: base_url.into(),
            api_key: api_key.into(),
            client: http::client(&policy),
            policy,
        }
    }

    /// Reads `CHAT_API_KEY` (required) and `CHAT_API_BASE`.
    pub fn from_env() -> Result<Self, ChatError> {
        let key = std::env::var("CHAT_API_KEY")
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(ChatError::MissingApiKey)?;
        let base = std::env::var("CHAT_API_BASE")
            .ok()
            .filter(|b| !b.trim().is_empty())
            .unwrap_or_else(|| DEFAULT_CHAT_BASE.to_string());
        Ok(Self::new(base, key))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, ChatError> {
        let url = http::join_url(&self.base_url, "chat/completions");
        let reply: Completion = http::post_json(&self.client, &self.policy, &url, Some(&self.api_key), request)
            .map_err(|e| match e {
                HttpError::Decode { .. } => ChatError::Protocol(e.to_string()),
                other => ChatError::Unavailable(other.to_string()),
            })?;
        if reply.choices.is_empty() {
            return Err(ChatError::Protocol("reply has no choices".into()));
        }
        Ok(reply
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }
}
