use std::time::Duration as StdDuration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LmBackend, LmError, LmReply, LmRequest, Role, TokenUsage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub temperature: f32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_secs: 60,
            max_retries: 3,
            temperature: 0.0,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(StdDuration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| LmError::Backend(e.to_string()))?;
        let api_key = config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Ok(HttpBackend { config, api_key, client })
    }

    fn attempt(&self, request: &LmRequest) -> Result<LmReply, (bool, String)> {
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::Human => "user",
                    Role::Ai => "assistant",
                };
                json!({ "role": role, "content": m.text })
            })
            .collect();
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, format!("status {status}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, format!("bad response body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or((false, "response has no content".to_string()))?;
        let usage = match parsed.usage {
            Some(u) => TokenUsage::new(u.prompt_tokens, u.completion_tokens),
            None => TokenUsage::counted(&request.messages, &text),
        };
        Ok(LmReply { text, usage })
    }
}

impl LmBackend for HttpBackend {
    fn complete(&self, request: &LmRequest) -> Result<LmReply, LmError> {
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err((false, msg)) => return Err(LmError::Backend(msg)),
                Err((true, msg)) => {
                    tracing::warn!(attempt, kind = %request.kind, "model call failed: {msg}");
                    last = msg;
                    if attempt + 1 < attempts {
                        std::thread::sleep(StdDuration::from_millis(100 << attempt.min(6)));
                    }
                }
            }
        }
        Err(LmError::Unreachable { attempts, last })
    }
}
