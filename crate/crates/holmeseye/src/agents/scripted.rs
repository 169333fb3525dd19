//! Deterministic scripted backend for tests and dry runs.
//!
//! Requests resolve by exact cache-key fingerprint first, then by
//! (role, pattern) rules in declaration order. Patterns match as a substring
//! of the request text or as a prefix of any attached image hash; `*` matches
//! everything. Unmatched requests are errors, and every resolved call is
//! appended to an ordered log for call-graph assertions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{cache_key, AgentBackend, AgentError, AgentRequest, AgentResponse, AgentRole};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub role: AgentRole,
    /// `*`, a substring of the request text, or a prefix of an image sha256.
    pub pattern: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    /// Exact request fingerprints (hex cache keys) to responses.
    #[serde(default)]
    pub exact: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn new() -> Self {
        Script::default()
    }

    pub fn rule(mut self, role: AgentRole, pattern: &str, response: &str) -> Self {
        self.rules.push(ScriptRule {
            role,
            pattern: pattern.to_string(),
            response: response.to_string(),
        });
        self
    }

    pub fn exact(mut self, fingerprint: &str, response: &str) -> Self {
        self.exact
            .insert(fingerprint.to_string(), response.to_string());
        self
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let raw = fs::read_to_string(path).map_err(|e| AgentError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        serde_json::from_str(&raw).map_err(|e| AgentError::Protocol(format!("script file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let json = serde_json::to_string_pretty(self).expect("script serializes");
        fs::write(path, json.as_bytes()).map_err(|e| AgentError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    fn resolve(&self, request: &AgentRequest, backend_id: &str) -> Option<String> {
        let fingerprint = cache_key(request, backend_id);
        if let Some(response) = self.exact.get(&fingerprint) {
            return Some(response.clone());
        }
        for rule in &self.rules {
            if rule.role != request.role {
                continue;
            }
            let matched = rule.pattern == "*"
                || request.text.contains(&rule.pattern)
                || request
                    .images
                    .iter()
                    .any(|img| img.sha256.starts_with(&rule.pattern));
            if matched {
                return Some(rule.response.clone());
            }
        }
        None
    }
}

pub struct ScriptedBackend {
    id: String,
    script: Script,
    call_log: Mutex<Vec<AgentRequest>>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, script: Script) -> Self {
        ScriptedBackend {
            id: id.into(),
            script,
            call_log: Mutex::new(Vec::new()),
        }
    }

    /// Ordered log of every request this backend actually served.
    pub fn call_log(&self) -> Vec<AgentRequest> {
        self.call_log.lock().unwrap().clone()
    }

    pub fn calls_by_role(&self, role: AgentRole) -> usize {
        self.call_log
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.role == role)
            .count()
    }
}

impl AgentBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let Some(text) = self.script.resolve(request, &self.id) else {
            let prefix: String = request.text.chars().take(80).collect();
            return Err(AgentError::UnmatchedRequest {
                role: request.role,
                prefix,
            });
        };
        self.call_log.lock().unwrap().push(request.clone());
        Ok(AgentResponse {
            text,
            latency_ms: 0,
            token_usage: None,
            backend_id: self.id.clone(),
            cached: false,
        })
    }
}
