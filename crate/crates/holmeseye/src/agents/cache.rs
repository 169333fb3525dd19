//! Content-addressed response cache: one file per cache key, holding the
//! serialized response. Values are deterministic functions of their key, so
//! concurrent writers racing on the same key are benign (last writer wins).

use std::fs;
use std::path::PathBuf;

use super::{AgentError, AgentResponse};

#[derive(Debug, Clone)]
pub struct CacheStore {
    dir: PathBuf,
}

impl CacheStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, AgentError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| AgentError::Io {
            path: dir.clone(),
            detail: e.to_string(),
        })?;
        Ok(CacheStore { dir })
    }

    pub fn dir(&self) -> &PathBuf {
        &self.dir
    }

    pub fn get(&self, key: &str) -> Result<Option<AgentResponse>, AgentError> {
        let path = self.dir.join(key);
        match fs::read_to_string(&path) {
            Ok(raw) => {
                let mut response: AgentResponse = serde_json::from_str(&raw)
                    .map_err(|e| AgentError::Protocol(format!("corrupt cache entry {key}: {e}")))?;
                response.cached = true;
                response.latency_ms = 0;
                Ok(Some(response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(AgentError::Io {
                path,
                detail: e.to_string(),
            }),
        }
    }

    pub fn put(&self, key: &str, response: &AgentResponse) -> Result<(), AgentError> {
        let path = self.dir.join(key);
        let tmp = self.dir.join(format!("{key}.tmp{}", std::process::id()));
        let json = serde_json::to_string(response).expect("response serializes");
        fs::write(&tmp, json.as_bytes()).map_err(|e| AgentError::Io {
            path: tmp.clone(),
            detail: e.to_string(),
        })?;
        fs::rename(&tmp, &path).map_err(|e| AgentError::Io {
            path,
            detail: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{
        assemble, cache_key, send, AgentBackend, AgentRole, PromptTemplate, Script,
        ScriptedBackend,
    };
    use std::collections::BTreeMap;
    use tempfile::TempDir;

    #[test]
    fn second_send_hits_cache_with_zero_backend_calls() {
        let dir = TempDir::new().unwrap();
        let cache = CacheStore::open(dir.path()).unwrap();
        let backend = ScriptedBackend::new(
            "mock",
            Script::new().rule(AgentRole::LlmSummarize, "*", "scripted reply"),
        );
        let template = PromptTemplate {
            role: AgentRole::LlmSummarize,
            name: "t".to_string(),
            body: "hello".to_string(),
        };
        let request = assemble(&template, &BTreeMap::new(), &[], &[]).unwrap();

        let first = send(&backend, Some(&cache), &request).unwrap();
        assert!(!first.cached);
        assert_eq!(backend.call_log().len(), 1);

        let second = send(&backend, Some(&cache), &request).unwrap();
        assert!(second.cached);
        assert_eq!(second.text, "scripted reply");
        assert_eq!(backend.call_log().len(), 1, "no second backend call");

        let key = cache_key(&request, backend.id());
        assert!(dir.path().join(key).exists());
    }
}
