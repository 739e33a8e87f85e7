//! Chat-completions style HTTP backend.
//!
//! Request body: `{"model", "messages": [{"role", "content"}], "temperature",
//! "max_tokens"}`. Reply: `choices[0].message.content` plus the optional
//! `usage.prompt_tokens` / `usage.completion_tokens` counts.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendReply, ChatBackend, CompletionRequest, GatewayError};
use crate::prompting::ChatMessage;
use crate::retry::{Attempt, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatConfig {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
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

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Debug)]
pub struct RemoteChatBackend {
    config: RemoteChatConfig,
    client: reqwest::blocking::Client,
}

impl RemoteChatBackend {
    pub fn new(config: RemoteChatConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { config, client })
    }
}

impl ChatBackend for RemoteChatBackend {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn send(&self, request: &CompletionRequest) -> Result<BackendReply, GatewayError> {
        let body = ChatBody {
            model: &self.config.model,
            messages: &request.bundle.messages,
            temperature: request.temperature,
            max_tokens: request.max_reply_tokens,
        };
        let parsed: ChatResponse = self.config.retry.run(|attempt| {
            let mut req = self.client.post(&self.config.url).json(&body);
            if let Some(token) = &self.config.auth_token {
                req = req.bearer_auth(token);
            }
            let resp = req.send().map_err(|e| {
                tracing::warn!(attempt, error = %e, "chat request failed");
                Attempt::Retry(GatewayError::ProviderUnavailable(e.to_string()))
            })?;
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                return Err(Attempt::Retry(GatewayError::ProviderUnavailable(format!(
                    "HTTP {status}"
                ))));
            }
            if !status.is_success() {
                return Err(Attempt::Fatal(GatewayError::ProviderUnavailable(format!(
                    "HTTP {status}"
                ))));
            }
            resp.json().map_err(|e| {
                Attempt::Retry(GatewayError::ProviderUnavailable(format!("bad reply body: {e}")))
            })
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| GatewayError::ProviderUnavailable("empty reply".into()))?;
        Ok(BackendReply {
            text,
            usage: parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
        })
    }
}
