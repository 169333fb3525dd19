//! Uniform request/response contract over VLM and LLM backends.
//!
//! Backends come in three flavors: a live HTTP chat endpoint, a deterministic
//! scripted mock for tests, and a content-addressed cache wrapper usable with
//! either. Prompt templates are loaded from files and assembled with explicit
//! placeholder bindings.

mod cache;
mod http;
mod scripted;

pub use cache::CacheStore;
pub use http::HttpBackend;
pub use scripted::{Script, ScriptRule, ScriptedBackend};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::ImageRef;
use crate::taxonomy::AttributeSpec;

/// The role a request plays in the pipeline. VLM roles carry image
/// attachments; LLM roles are text-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    VlmExtract,
    VlmAnalyze,
    VlmInquiry,
    VlmStrongPrompt,
    LlmGuide,
    LlmSummarize,
    LlmDecide,
    LlmJudge,
}

impl AgentRole {
    pub fn is_vlm(self) -> bool {
        matches!(
            self,
            AgentRole::VlmExtract
                | AgentRole::VlmAnalyze
                | AgentRole::VlmInquiry
                | AgentRole::VlmStrongPrompt
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::VlmExtract => "VlmExtract",
            AgentRole::VlmAnalyze => "VlmAnalyze",
            AgentRole::VlmInquiry => "VlmInquiry",
            AgentRole::VlmStrongPrompt => "VlmStrongPrompt",
            AgentRole::LlmGuide => "LlmGuide",
            AgentRole::LlmSummarize => "LlmSummarize",
            AgentRole::LlmDecide => "LlmDecide",
            AgentRole::LlmJudge => "LlmJudge",
        }
    }

    pub fn parse(s: &str) -> Option<AgentRole> {
        [
            AgentRole::VlmExtract,
            AgentRole::VlmAnalyze,
            AgentRole::VlmInquiry,
            AgentRole::VlmStrongPrompt,
            AgentRole::LlmGuide,
            AgentRole::LlmSummarize,
            AgentRole::LlmDecide,
            AgentRole::LlmJudge,
        ]
        .into_iter()
        .find(|r| r.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named prompt template with `{placeholder}` slots, always loaded from a
/// file rather than inlined in code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: AgentRole,
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn load(role: AgentRole, name: &str, path: &Path) -> Result<Self, AgentError> {
        let body = fs::read_to_string(path).map_err(|e| AgentError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(PromptTemplate {
            role,
            name: name.to_string(),
            body,
        })
    }
}

/// The full set of templates the engine uses, loaded from a prompts directory.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub extract: PromptTemplate,
    pub analyze: PromptTemplate,
    pub summarize: PromptTemplate,
    pub inquiry: PromptTemplate,
    pub decision: PromptTemplate,
    pub judge: PromptTemplate,
    pub guide: PromptTemplate,
    pub strong: PromptTemplate,
}

impl PromptSet {
    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        Ok(PromptSet {
            extract: PromptTemplate::load(AgentRole::VlmExtract, "p_v_ex", &dir.join("p_v_ex.txt"))?,
            analyze: PromptTemplate::load(
                AgentRole::VlmAnalyze,
                "p_v_analy",
                &dir.join("p_v_analy.txt"),
            )?,
            summarize: PromptTemplate::load(
                AgentRole::LlmSummarize,
                "p_l_sum",
                &dir.join("p_l_sum.txt"),
            )?,
            inquiry: PromptTemplate::load(
                AgentRole::VlmInquiry,
                "p_v_inquiry",
                &dir.join("p_v_inquiry.txt"),
            )?,
            decision: PromptTemplate::load(
                AgentRole::LlmDecide,
                "p_l_decision",
                &dir.join("p_l_decision.txt"),
            )?,
            judge: PromptTemplate::load(AgentRole::LlmJudge, "l_judge", &dir.join("l_judge.txt"))?,
            guide: PromptTemplate::load(AgentRole::LlmGuide, "l_guide", &dir.join("l_guide.txt"))?,
            strong: PromptTemplate::load(
                AgentRole::VlmStrongPrompt,
                "p_v_strong",
                &dir.join("p_v_strong.txt"),
            )?,
        })
    }
}

/// Generation parameters; temperature defaults to 0 for determinism and is
/// part of the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_tokens: u32,
    pub temperature: f32,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_tokens: 2048,
            temperature: 0.0,
        }
    }
}

/// An assembled request ready to send to a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub role: AgentRole,
    pub template_name: String,
    pub text: String,
    pub images: Vec<ImageRef>,
    pub params: GenParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
    pub backend_id: String,
    pub cached: bool,
}

/// Backend endpoint configuration. Credentials live in the named environment
/// variable, never in the file itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    /// "http" or "scripted".
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_initial_delay_ms: u64,
    #[serde(default = "default_backoff_mult")]
    pub retry_backoff_multiplier: f64,
    /// Script file for scripted backends, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<String>,
}

fn default_kind() -> String {
    "http".to_string()
}
fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_backoff_mult() -> f64 {
    2.0
}

/// `backends.json`: a list of backend configs.
pub fn load_backend_configs(path: &Path) -> Result<Vec<BackendConfig>, AgentError> {
    let raw = fs::read_to_string(path).map_err(|e| AgentError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    serde_json::from_str(&raw).map_err(|e| AgentError::Protocol(format!("backends.json: {e}")))
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unbound placeholder {{{0}}} in template {1}")]
    UnboundPlaceholder(String, String),
    #[error("auth env var {0} is not set")]
    AuthMissing(String),
    #[error("request timed out")]
    Timeout,
    #[error("retries exhausted after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no script entry matches {role} request starting {prefix:?}")]
    UnmatchedRequest { role: AgentRole, prefix: String },
    #[error("io error at {path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

/// A synchronous model backend. Implementations must be safe to call from
/// multiple threads at once.
pub trait AgentBackend: Send + Sync {
    fn id(&self) -> &str;
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError>;
}

/// Delimiter inserted between appended prompt parts.
pub const PART_DELIMITER: &str = "\n----\n";

/// Substitute placeholders, append `parts` joined by the fixed delimiter, and
/// attach images in order. Deterministic for identical inputs.
pub fn assemble(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
    parts: &[String],
    images: &[ImageRef],
) -> Result<AgentRequest, AgentError> {
    let text = substitute(&template.body, bindings, &template.name)?;
    let mut full = text;
    for part in parts {
        full.push_str(PART_DELIMITER);
        full.push_str(part);
    }
    Ok(AgentRequest {
        role: template.role,
        template_name: template.name.clone(),
        text: full,
        images: images.to_vec(),
        params: GenParams::default(),
    })
}

fn substitute(
    body: &str,
    bindings: &BTreeMap<String, String>,
    template_name: &str,
) -> Result<String, AgentError> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                let name = &after[..close];
                match bindings.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        return Err(AgentError::UnboundPlaceholder(
                            name.to_string(),
                            template_name.to_string(),
                        ))
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                // Not a placeholder; keep the brace literally.
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Content digest over the canonical serialization of everything that affects
/// a response: role, template, backend, generation parameters, text, and the
/// ordered image hashes.
pub fn cache_key(request: &AgentRequest, backend_id: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"role=");
    hasher.update(request.role.as_str().as_bytes());
    hasher.update(b"\ntemplate=");
    hasher.update(request.template_name.as_bytes());
    hasher.update(b"\nbackend=");
    hasher.update(backend_id.as_bytes());
    hasher.update(b"\nmax_tokens=");
    hasher.update(request.params.max_tokens.to_string().as_bytes());
    hasher.update(b"\ntemperature=");
    hasher.update(format!("{:.6}", request.params.temperature).as_bytes());
    hasher.update(b"\ntext=");
    hasher.update(request.text.as_bytes());
    hasher.update(b"\nimages=");
    for img in &request.images {
        hasher.update(img.sha256.as_bytes());
        hasher.update(b",");
    }
    hex::encode(hasher.finalize())
}

/// Send a request through an optional cache. On a hit the backend is never
/// invoked and the response comes back with `cached = true`.
pub fn send(
    backend: &dyn AgentBackend,
    cache: Option<&CacheStore>,
    request: &AgentRequest,
) -> Result<AgentResponse, AgentError> {
    let key = cache_key(request, backend.id());
    if let Some(store) = cache {
        if let Some(hit) = store.get(&key)? {
            return Ok(hit);
        }
    }
    let response = backend.invoke(request)?;
    if response.text.is_empty() {
        return Err(AgentError::Protocol("empty response text".to_string()));
    }
    if let Some(store) = cache {
        store.put(&key, &response)?;
    }
    Ok(response)
}

/// What the guidance call should focus on: single-image extraction or
/// cross-image analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceKind {
    Extraction,
    Analysis,
}

/// One LLM call asking how to extract attribute-relevant information; the
/// returned text is embedded into the extraction/analysis templates. Cached
/// per (taxonomy version, backend) when a cache store is supplied.
pub fn generate_guidance(
    backend: &dyn AgentBackend,
    cache: Option<&CacheStore>,
    guide_template: &PromptTemplate,
    taxonomy: &[AttributeSpec],
    taxonomy_version: &str,
    kind: GuidanceKind,
) -> Result<String, AgentError> {
    let focus = match kind {
        GuidanceKind::Extraction => {
            "visual details within a single image, such as color features, content, and composition"
        }
        GuidanceKind::Analysis => {
            "relationships between objects in different images and the similarities or differences in their styles"
        }
    };
    let mut bindings = BTreeMap::new();
    bindings.insert("attributes".to_string(), attribute_listing(taxonomy));
    bindings.insert("focus".to_string(), focus.to_string());
    bindings.insert("taxonomy_version".to_string(), taxonomy_version.to_string());
    let request = assemble(guide_template, &bindings, &[], &[])?;
    Ok(send(backend, cache, &request)?.text)
}

/// Render the taxonomy as a numbered prompt block.
pub fn attribute_listing(taxonomy: &[AttributeSpec]) -> String {
    let mut out = String::new();
    for (i, spec) in taxonomy.iter().enumerate() {
        let domain = match spec.kind {
            crate::taxonomy::AttributeKind::Qualitative => format!(
                "one of: {}",
                spec.labels.as_deref().unwrap_or(&[]).join(", ")
            ),
            crate::taxonomy::AttributeKind::Quantitative => format!(
                "integer level {}..{}",
                spec.scale_min.unwrap_or(1),
                spec.scale_max.unwrap_or(5)
            ),
            crate::taxonomy::AttributeKind::Ambiguous => "free text".to_string(),
        };
        out.push_str(&format!(
            "{}. {} — {} ({})\n",
            i + 1,
            spec.id,
            spec.description,
            domain
        ));
    }
    out
}
