use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, GatewayError, LlmConfig};

const MAX_ATTEMPTS: u32 = 3;

/// OpenAI-compatible `/chat/completions` client.
///
/// Transport failures (connection errors, timeouts, 5xx, 429) are retried up
/// to three attempts with exponential backoff; other statuses are returned
/// immediately.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    backoff: Duration,
}

impl HttpBackend {
    pub fn from_config(config: &LlmConfig) -> Result<Self, GatewayError> {
        if config.base_url.is_empty() {
            return Err(GatewayError::Config("http backend needs base_url".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s.max(1)))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            api_key: std::env::var(&config.api_key_env).ok(),
            backoff: Duration::from_secs(1),
        })
    }

    /// Overrides the initial retry delay (1 s by default).
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_output_tokens,
        });
        if let Some(effort) = request.params.reasoning_effort {
            body["reasoning_effort"] = json!(effort);
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<String, (bool, GatewayError)> {
        let mut builder = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            let err = if e.is_timeout() {
                GatewayError::Timeout { attempts: 1 }
            } else {
                GatewayError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                }
            };
            (true, err)
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            (
                true,
                GatewayError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                },
            )
        })?;
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((
                retry,
                GatewayError::Status {
                    status: status.as_u16(),
                    body: text,
                },
            ));
        }
        let parsed: Value = serde_json::from_str(&text).map_err(|e| {
            (
                false,
                GatewayError::InvalidRequest(format!("unparsable completion: {e}")),
            )
        })?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or((
                false,
                GatewayError::InvalidRequest("completion has no message content".into()),
            ))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = self.request_body(request);
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err((retry, err)) if !retry || attempt == MAX_ATTEMPTS => {
                    return Err(match err {
                        GatewayError::Timeout { .. } => GatewayError::Timeout { attempts: attempt },
                        GatewayError::Transport { message, .. } => GatewayError::Transport {
                            attempts: attempt,
                            message,
                        },
                        other => other,
                    })
                }
                Err((_, err)) => {
                    tracing::warn!("attempt {attempt} failed: {err}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}
