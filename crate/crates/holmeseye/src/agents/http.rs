//! Live HTTP backend: a single configurable JSON chat-style POST with images
//! attached as base64 data URLs. Provider differences are normalized behind
//! [`BackendConfig`] rather than per-provider modules.
//!
//! Retry policy: timeouts and 5xx-equivalent replies retry with exponential
//! backoff; auth and other 4xx errors never retry.

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{AgentBackend, AgentError, AgentRequest, AgentResponse, BackendConfig, TokenUsage};

pub struct HttpBackend {
    config: BackendConfig,
    /// Directory image paths resolve against.
    image_root: PathBuf,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: BackendConfig, image_root: impl Into<PathBuf>) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| AgentError::Protocol(e.to_string()))?;
        Ok(HttpBackend {
            config,
            image_root: image_root.into(),
            client,
        })
    }

    fn credential(&self) -> Result<Option<String>, AgentError> {
        match &self.config.auth_env_var {
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| AgentError::AuthMissing(var.clone())),
            None => Ok(None),
        }
    }

    fn build_body(&self, request: &AgentRequest) -> Result<Value, AgentError> {
        let mut content = vec![json!({ "type": "text", "text": request.text })];
        for img in &request.images {
            let path = self.image_root.join(&img.path);
            let bytes = fs::read(&path).map_err(|e| AgentError::Io {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
            content.push(json!({
                "type": "image_url",
                "image_url": { "url": format!("data:{};base64,{}", img.media_type, encoded) }
            }));
        }
        Ok(json!({
            "model": self.config.model_name,
            "messages": [
                { "role": "system", "content": format!("role: {}", request.role) },
                { "role": "user", "content": content }
            ],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        }))
    }

    fn attempt(&self, body: &Value, auth: Option<&str>) -> Result<AgentResponse, AttemptError> {
        let mut builder = self.client.post(&self.config.endpoint_url).json(body);
        if let Some(token) = auth {
            builder = builder.bearer_auth(token);
        }
        let started = Instant::now();
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Transient(AgentError::Timeout)
            } else {
                AttemptError::Transient(AgentError::Protocol(e.to_string()))
            }
        })?;
        let status = response.status();
        if status.is_server_error() {
            return Err(AttemptError::Transient(AgentError::Protocol(format!(
                "server error {status}"
            ))));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(AgentError::Protocol(format!(
                "endpoint returned {status}"
            ))));
        }
        let latency_ms = started.elapsed().as_millis() as u64;
        let reply: Value = response
            .json()
            .map_err(|e| AttemptError::Fatal(AgentError::Protocol(e.to_string())))?;
        let text = reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                AttemptError::Fatal(AgentError::Protocol(
                    "reply missing choices[0].message.content".to_string(),
                ))
            })?;
        let token_usage = reply.get("usage").map(|u| TokenUsage {
            prompt: u["prompt_tokens"].as_u64().unwrap_or(0),
            output: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        Ok(AgentResponse {
            text,
            latency_ms,
            token_usage,
            backend_id: self.config.backend_id.clone(),
            cached: false,
        })
    }
}

enum AttemptError {
    Transient(AgentError),
    Fatal(AgentError),
}

impl AgentBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.backend_id
    }

    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        // Auth is checked before any network traffic.
        let auth = self.credential()?;
        let body = self.build_body(request)?;
        let mut delay = Duration::from_millis(self.config.retry_initial_delay_ms);
        let attempts = self.config.max_retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.attempt(&body, auth.as_deref()) {
                Ok(response) => return Ok(response),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(e)) => {
                    last = e.to_string();
                    if attempt + 1 < attempts {
                        std::thread::sleep(delay);
                        delay = Duration::from_secs_f64(
                            delay.as_secs_f64() * self.config.retry_backoff_multiplier,
                        );
                    }
                }
            }
        }
        Err(AgentError::ExhaustedRetries { attempts, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::GenParams;
    use crate::agents::AgentRole;

    fn config(auth_env_var: Option<&str>) -> BackendConfig {
        BackendConfig {
            backend_id: "live".to_string(),
            kind: "http".to_string(),
            endpoint_url: "http://127.0.0.1:1/v1/chat/completions".to_string(),
            model_name: "test-model".to_string(),
            auth_env_var: auth_env_var.map(str::to_string),
            timeout_secs: 1,
            max_retries: 1,
            retry_initial_delay_ms: 1,
            retry_backoff_multiplier: 2.0,
            script_path: None,
        }
    }

    #[test]
    fn missing_auth_env_fails_before_any_network_call() {
        let backend = HttpBackend::new(config(Some("HOLMESEYE_TEST_UNSET_VAR")), ".").unwrap();
        let request = AgentRequest {
            role: AgentRole::LlmDecide,
            template_name: "t".to_string(),
            text: "x".to_string(),
            images: vec![],
            params: GenParams::default(),
        };
        assert!(matches!(
            backend.invoke(&request),
            Err(AgentError::AuthMissing(var)) if var == "HOLMESEYE_TEST_UNSET_VAR"
        ));
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let backend = HttpBackend::new(config(None), ".").unwrap();
        let request = AgentRequest {
            role: AgentRole::LlmDecide,
            template_name: "t".to_string(),
            text: "x".to_string(),
            images: vec![],
            params: GenParams::default(),
        };
        assert!(matches!(
            backend.invoke(&request),
            Err(AgentError::ExhaustedRetries { .. })
        ));
    }
}
