//! HTTP backends speaking a chat-completions-style wire format.
//!
//! Completion requests POST to `{base_url}/chat/completions` with one user
//! message whose content interleaves text and `data:` image URLs;
//! perception requests POST to `{base_url}/perceive`. Auth is a bearer
//! token read from a named environment variable at construction time.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::json;

use super::{
    Backend, BackendConfig, BackendError, BackendReply, GatewayError, ImagePayload, ModelRequest,
    Part, PerceptionBackend, PerceptionKind, TokenUsage,
};

pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    auth_token: Option<String>,
}

impl HttpChatBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        let auth_token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Config(format!("auth environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_seconds))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpChatBackend {
            client,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            auth_token,
        })
    }

    fn message_content(request: &ModelRequest) -> serde_json::Value {
        let parts: Vec<serde_json::Value> = request
            .parts
            .iter()
            .map(|part| match part {
                Part::Text(text) => json!({"type": "text", "text": text}),
                Part::Image(img) => json!({
                    "type": "image_url",
                    "image_url": {
                        "url": format!(
                            "data:{};base64,{}",
                            img.media_type,
                            BASE64.encode(&img.data)
                        )
                    }
                }),
            })
            .collect();
        serde_json::Value::Array(parts)
    }
}

impl Backend for HttpChatBackend {
    fn complete(&self, request: &ModelRequest) -> Result<BackendReply, BackendError> {
        let mut body = json!({
            "model": request.model_name,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": Self::message_content(request)}],
        });
        if let Some(max) = request.max_output {
            body["max_tokens"] = json!(max);
        }

        let mut http = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Some(token) = &self.auth_token {
            http = http.bearer_auth(token);
        }
        let response = http
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                message: text,
            });
        }

        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Other(format!("unparseable response body: {e}")))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Other("response has no message content".into()))?
            .to_string();
        let usage = value.get("usage").map(|u| TokenUsage {
            prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        Ok(BackendReply {
            text: content,
            usage,
        })
    }
}

pub struct HttpPerceptionBackend {
    client: reqwest::blocking::Client,
    base_url: String,
}

impl HttpPerceptionBackend {
    pub fn new(base_url: &str, timeout_seconds: u64) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(timeout_seconds))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpPerceptionBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
        })
    }
}

impl PerceptionBackend for HttpPerceptionBackend {
    fn perceive(
        &self,
        image: &ImagePayload,
        kind: PerceptionKind,
    ) -> Result<ImagePayload, BackendError> {
        let body = json!({
            "kind": kind.as_str(),
            "media_type": image.media_type,
            "data_b64": BASE64.encode(&image.data),
        });
        let response = self
            .client
            .post(format!("{}/perceive", self.base_url))
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                message: text,
            });
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Other(format!("unparseable response body: {e}")))?;
        let media_type = value["media_type"]
            .as_str()
            .unwrap_or("application/octet-stream")
            .to_string();
        let data = BASE64
            .decode(value["data_b64"].as_str().unwrap_or_default())
            .map_err(|e| BackendError::Other(format!("bad base64 payload: {e}")))?;
        Ok(ImagePayload { media_type, data })
    }
}
