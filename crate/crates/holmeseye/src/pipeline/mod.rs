//! The five-phase audit state machine:
//! Extraction → Analysis → Summarization → (Inquiry → Decision | short-circuit),
//! plus the single-call strong-prompt baseline and per-phase ablation toggles.
//!
//! Every phase's output is persisted as JSON before the next phase starts, so
//! runs are resumable: on restart, an unbroken prefix of persisted phase files
//! is loaded instead of re-executed, and everything after the first missing
//! file is recomputed.

pub mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    assemble, cache_key, send, AgentBackend, AgentError, AgentRequest, AgentResponse, AgentRole,
    CacheStore, PromptSet, PromptTemplate,
};
use crate::dataset::{ImageRef, IndividualRecord};
use crate::taxonomy::{AttributeProfile, AttributeSpec};

use output::{parse_profile_block, render_profile_block, FORMAT_RULES, REPAIR_REMINDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseToggles {
    pub extraction: bool,
    pub analysis: bool,
    pub summarization: bool,
    pub inquiry_decision: bool,
}

impl Default for PhaseToggles {
    fn default() -> Self {
        PhaseToggles {
            extraction: true,
            analysis: true,
            summarization: true,
            inquiry_decision: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub group_size: usize,
    pub toggles: PhaseToggles,
    pub vlm_backend_id: String,
    pub llm_backend_id: String,
    pub max_parallel_vlm_calls: usize,
    pub persist_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(persist_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            group_size: 3,
            toggles: PhaseToggles::default(),
            vlm_backend_id: "vlm".to_string(),
            llm_backend_id: "llm".to_string(),
            max_parallel_vlm_calls: 4,
            persist_dir: persist_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.group_size == 0 {
            return Err(PipelineError::BadCount("group_size must be >= 1".into()));
        }
        if !self.toggles.extraction && !self.toggles.analysis {
            return Err(PipelineError::Precondition(
                "at least one of extraction/analysis must be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Per-image extraction results, one entry per input image in image order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntraFindings {
    pub entries: Vec<IntraFinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntraFinding {
    /// 1-based image index.
    pub image_index: usize,
    pub text: String,
}

/// Per-group analysis results, one entry per group in group order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterFindings {
    pub groups: Vec<InterFinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterFinding {
    pub group_index: usize,
    /// 1-based image indices belonging to this group.
    pub members: Vec<usize>,
    pub text: String,
}

/// The LLM's first consolidated inference, possibly partial. An absent
/// question implies a complete profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialInference {
    pub profile: AttributeProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisedEvidence {
    pub text: String,
}

/// One sent request, as recorded in `calls.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: AgentRole,
    pub cache_key: String,
    pub latency_ms: u64,
    pub cached: bool,
}

#[derive(Debug, Default)]
pub struct CallLog {
    records: Mutex<Vec<CallRecord>>,
}

impl CallLog {
    pub fn new() -> Self {
        CallLog::default()
    }

    fn record(&self, role: AgentRole, key: String, response: &AgentResponse) {
        self.records.lock().unwrap().push(CallRecord {
            role,
            cache_key: key,
            latency_ms: response.latency_ms,
            cached: response.cached,
        });
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn count_role(&self, role: AgentRole) -> usize {
        self.records
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.role == role)
            .count()
    }
}

/// Everything a run needs to talk to models.
pub struct PipelineAgents<'a> {
    pub vlm: &'a dyn AgentBackend,
    pub llm: &'a dyn AgentBackend,
    pub cache: Option<&'a CacheStore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub individual_id: String,
    pub config: PipelineConfig,
    pub intra: IntraFindings,
    pub inter: InterFindings,
    pub initial: InitialInference,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised: Option<RevisedEvidence>,
    pub final_profile: AttributeProfile,
    pub call_counts: BTreeMap<AgentRole, usize>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{context}: {source}")]
    Agent {
        context: String,
        source: AgentError,
    },
    #[error("unparseable {role} output: {detail}")]
    UnparseableOutput { role: AgentRole, detail: String },
    #[error("io error at {path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("bad count: {0}")]
    BadCount(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl PipelineError {
    fn agent(context: impl Into<String>) -> impl FnOnce(AgentError) -> PipelineError {
        let context = context.into();
        move |source| PipelineError::Agent { context, source }
    }
}

/// Contiguous partition of image indices 1..=n into groups of `group_size`,
/// the last group holding the remainder. Group count is ⌈n / g⌉.
pub fn group_images(n: usize, group_size: usize) -> Result<Vec<Vec<usize>>, PipelineError> {
    if n == 0 || group_size == 0 {
        return Err(PipelineError::BadCount(format!(
            "n={n}, group_size={group_size}"
        )));
    }
    let groups = (1..=n)
        .collect::<Vec<usize>>()
        .chunks(group_size)
        .map(|chunk| chunk.to_vec())
        .collect();
    Ok(groups)
}

fn logged_send(
    backend: &dyn AgentBackend,
    cache: Option<&CacheStore>,
    log: &CallLog,
    request: &AgentRequest,
    context: &str,
) -> Result<AgentResponse, PipelineError> {
    let key = cache_key(request, backend.id());
    let response = send(backend, cache, request).map_err(PipelineError::agent(context))?;
    log.record(request.role, key, &response);
    Ok(response)
}

/// Run `f(0..n)` across at most `bound` worker threads, keeping results in
/// index order regardless of completion order.
fn bounded_map<T, F>(n: usize, bound: usize, f: F) -> Vec<Result<T, PipelineError>>
where
    T: Send,
    F: Fn(usize) -> Result<T, PipelineError> + Sync,
{
    let bound = bound.max(1).min(n.max(1));
    if bound == 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T, PipelineError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..bound {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let result = f(i);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

/// One VLM call per image with the same template and guidance; results are
/// re-sequenced by image index.
pub fn extract_intra(
    images: &[ImageRef],
    agents: &PipelineAgents,
    log: &CallLog,
    template: &PromptTemplate,
    guidance: &str,
    max_parallel: usize,
) -> Result<IntraFindings, PipelineError> {
    if images.is_empty() {
        return Err(PipelineError::Precondition("no images to extract".into()));
    }
    let mut bindings = BTreeMap::new();
    bindings.insert("guidance".to_string(), guidance.to_string());
    let results = bounded_map(images.len(), max_parallel, |i| {
        let request = assemble(template, &bindings, &[], &images[i..=i])
            .map_err(PipelineError::agent(format!("extract image {}", i + 1)))?;
        let response = logged_send(
            agents.vlm,
            agents.cache,
            log,
            &request,
            &format!("extract image {}", i + 1),
        )?;
        Ok(IntraFinding {
            image_index: i + 1,
            text: response.text,
        })
    });
    let mut entries = Vec::with_capacity(images.len());
    for result in results {
        entries.push(result?);
    }
    Ok(IntraFindings { entries })
}

/// One VLM call per group with that group's images attached.
pub fn analyze_inter(
    images: &[ImageRef],
    groups: &[Vec<usize>],
    agents: &PipelineAgents,
    log: &CallLog,
    template: &PromptTemplate,
    guidance: &str,
    max_parallel: usize,
) -> Result<InterFindings, PipelineError> {
    let mut bindings = BTreeMap::new();
    bindings.insert("guidance".to_string(), guidance.to_string());
    let results = bounded_map(groups.len(), max_parallel, |j| {
        let members = &groups[j];
        let attached: Vec<ImageRef> = members.iter().map(|&i| images[i - 1].clone()).collect();
        let request = assemble(template, &bindings, &[], &attached)
            .map_err(PipelineError::agent(format!("analyze group {}", j + 1)))?;
        let response = logged_send(
            agents.vlm,
            agents.cache,
            log,
            &request,
            &format!("analyze group {}", j + 1),
        )?;
        Ok(InterFinding {
            group_index: j + 1,
            members: members.clone(),
            text: response.text,
        })
    });
    let mut entries = Vec::with_capacity(groups.len());
    for result in results {
        entries.push(result?);
    }
    Ok(InterFindings { groups: entries })
}

fn render_intra(intra: &IntraFindings) -> String {
    let mut out = String::from("Per-image findings:\n");
    for finding in &intra.entries {
        out.push_str(&format!("Image {}: {}\n", finding.image_index, finding.text));
    }
    out
}

fn render_inter(inter: &InterFindings) -> String {
    let mut out = String::from("Cross-image findings:\n");
    for finding in &inter.groups {
        let members: Vec<String> = finding.members.iter().map(usize::to_string).collect();
        out.push_str(&format!(
            "Group {} (images {}): {}\n",
            finding.group_index,
            members.join(","),
            finding.text
        ));
    }
    out
}

fn profile_bindings(taxonomy: &[AttributeSpec]) -> BTreeMap<String, String> {
    let mut bindings = BTreeMap::new();
    bindings.insert(
        "attributes".to_string(),
        crate::agents::attribute_listing(taxonomy),
    );
    bindings.insert("format_rules".to_string(), FORMAT_RULES.to_string());
    bindings
}

/// Send a profile-emitting request, retrying once with a format reminder on
/// a malformed reply.
fn send_profile_request(
    backend: &dyn AgentBackend,
    cache: Option<&CacheStore>,
    log: &CallLog,
    request: AgentRequest,
    taxonomy: &[AttributeSpec],
    context: &str,
    require_question_when_partial: bool,
) -> Result<(output::ParsedProfileBlock, String), PipelineError> {
    let response = logged_send(backend, cache, log, &request, context)?;
    match checked_parse(&response.text, taxonomy, require_question_when_partial) {
        Ok(parsed) => Ok((parsed, response.text)),
        Err(first_err) => {
            let mut repair = request.clone();
            repair.text = format!("{}\n\n{}", request.text, REPAIR_REMINDER);
            let retry = logged_send(backend, cache, log, &repair, context)?;
            checked_parse(&retry.text, taxonomy, require_question_when_partial)
                .map(|parsed| (parsed, retry.text))
                .map_err(|second_err| PipelineError::UnparseableOutput {
                    role: request.role,
                    detail: format!("{first_err}; after repair retry: {second_err}"),
                })
        }
    }
}

fn checked_parse(
    raw: &str,
    taxonomy: &[AttributeSpec],
    require_question_when_partial: bool,
) -> Result<output::ParsedProfileBlock, String> {
    let parsed = parse_profile_block(raw, taxonomy).map_err(|v| v.0)?;
    if require_question_when_partial && parsed.question.is_none() && !parsed.profile.is_complete()
    {
        return Err(format!(
            "profile incomplete ({} of 12) with no question",
            parsed.profile.coverage().len()
        ));
    }
    Ok(parsed)
}

/// Single LLM call consolidating all findings into an initial inference and,
/// when attributes remain uninferable, a question for the inquiry phase.
pub fn summarize(
    intra: &IntraFindings,
    inter: &InterFindings,
    agents: &PipelineAgents,
    log: &CallLog,
    template: &PromptTemplate,
    taxonomy: &[AttributeSpec],
) -> Result<InitialInference, PipelineError> {
    if intra.entries.is_empty() && inter.groups.is_empty() {
        return Err(PipelineError::Precondition(
            "summarize requires at least one finding".into(),
        ));
    }
    let mut parts = Vec::new();
    if !inter.groups.is_empty() {
        parts.push(render_inter(inter));
    }
    if !intra.entries.is_empty() {
        parts.push(render_intra(intra));
    }
    let request = assemble(template, &profile_bindings(taxonomy), &parts, &[])
        .map_err(PipelineError::agent("summarize"))?;
    let (parsed, raw_text) = send_profile_request(
        agents.llm,
        agents.cache,
        log,
        request,
        taxonomy,
        "summarize",
        true,
    )?;
    Ok(InitialInference {
        profile: parsed.profile,
        question: parsed.question,
        raw_text,
    })
}

/// One VLM call answering the inquiry question over ALL images.
pub fn inquire(
    question: &str,
    images: &[ImageRef],
    agents: &PipelineAgents,
    log: &CallLog,
    template: &PromptTemplate,
) -> Result<RevisedEvidence, PipelineError> {
    if question.trim().is_empty() {
        return Err(PipelineError::Precondition("empty inquiry question".into()));
    }
    let request = assemble(
        template,
        &BTreeMap::new(),
        &[question.to_string()],
        images,
    )
    .map_err(PipelineError::agent("inquire"))?;
    let response = logged_send(agents.vlm, agents.cache, log, &request, "inquire")?;
    Ok(RevisedEvidence {
        text: response.text,
    })
}

/// Single LLM call combining the initial inference with the revised evidence
/// into a complete final profile. Attributes still missing after the repair
/// retry are filled with the abstain sentinel so failure stays visible.
pub fn decide(
    initial: &InitialInference,
    revised: &RevisedEvidence,
    agents: &PipelineAgents,
    log: &CallLog,
    template: &PromptTemplate,
    taxonomy: &[AttributeSpec],
) -> Result<AttributeProfile, PipelineError> {
    let parts = vec![
        format!(
            "Initial inference:\n{}",
            render_profile_block(&initial.profile, initial.question.as_deref())
        ),
        format!("Revised evidence:\n{}", revised.text),
    ];
    decide_on_parts(parts, agents, log, template, taxonomy)
}

/// Decision call fed directly from raw findings (the no-summarization
/// ablation path).
pub fn decide_direct(
    intra: &IntraFindings,
    inter: &InterFindings,
    agents: &PipelineAgents,
    log: &CallLog,
    template: &PromptTemplate,
    taxonomy: &[AttributeSpec],
) -> Result<AttributeProfile, PipelineError> {
    let mut parts = Vec::new();
    if !inter.groups.is_empty() {
        parts.push(render_inter(inter));
    }
    if !intra.entries.is_empty() {
        parts.push(render_intra(intra));
    }
    decide_on_parts(parts, agents, log, template, taxonomy)
}

fn decide_on_parts(
    parts: Vec<String>,
    agents: &PipelineAgents,
    log: &CallLog,
    template: &PromptTemplate,
    taxonomy: &[AttributeSpec],
) -> Result<AttributeProfile, PipelineError> {
    let request = assemble(template, &profile_bindings(taxonomy), &parts, &[])
        .map_err(PipelineError::agent("decide"))?;
    let (parsed, _raw) = send_profile_request(
        agents.llm,
        agents.cache,
        log,
        request,
        taxonomy,
        "decide",
        false,
    )?;
    let mut profile = parsed.profile;
    profile.fill_abstain();
    Ok(profile)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(value).expect("phase artifact serializes");
    fs::write(path, json.as_bytes()).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let raw = fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    serde_json::from_str(&raw).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        detail: format!("corrupt phase file: {e}"),
    })
}

/// Execute the enabled phases in order for one individual, persisting each
/// phase's output before the next starts. Guidance strings are precomputed by
/// the caller (one LlmGuide call each, cached per taxonomy and backend).
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    record: &IndividualRecord,
    agents: &PipelineAgents,
    prompts: &PromptSet,
    config: &PipelineConfig,
    taxonomy: &[AttributeSpec],
    extract_guidance: &str,
    analyze_guidance: &str,
) -> Result<PipelineRun, PipelineError> {
    config.validate()?;
    let started = Instant::now();
    let dir = config.persist_dir.join(&record.individual_id);
    fs::create_dir_all(&dir).map_err(|e| PipelineError::Io {
        path: dir.clone(),
        detail: e.to_string(),
    })?;
    let log = CallLog::new();
    let images = &record.images;
    // `fresh` flips once any phase is recomputed; later persisted files are
    // then stale and must be recomputed too.
    let mut fresh = false;

    let intra_path = dir.join("intra.json");
    let intra: IntraFindings = if !fresh && intra_path.exists() {
        read_json(&intra_path)?
    } else {
        fresh = true;
        let findings = if config.toggles.extraction {
            extract_intra(
                images,
                agents,
                &log,
                &prompts.extract,
                extract_guidance,
                config.max_parallel_vlm_calls,
            )?
        } else {
            IntraFindings::default()
        };
        write_json(&intra_path, &findings)?;
        findings
    };

    let inter_path = dir.join("inter.json");
    let inter: InterFindings = if !fresh && inter_path.exists() {
        read_json(&inter_path)?
    } else {
        fresh = true;
        let findings = if config.toggles.analysis {
            let groups = group_images(images.len(), config.group_size)?;
            analyze_inter(
                images,
                &groups,
                agents,
                &log,
                &prompts.analyze,
                analyze_guidance,
                config.max_parallel_vlm_calls,
            )?
        } else {
            InterFindings::default()
        };
        write_json(&inter_path, &findings)?;
        findings
    };

    let initial_path = dir.join("initial.json");
    let initial: InitialInference = if !fresh && initial_path.exists() {
        read_json(&initial_path)?
    } else {
        fresh = true;
        let inference = if config.toggles.summarization {
            summarize(&intra, &inter, agents, &log, &prompts.summarize, taxonomy)?
        } else {
            // No-summarization ablation: findings feed the decision directly.
            InitialInference {
                profile: AttributeProfile::new(),
                question: None,
                raw_text: String::new(),
            }
        };
        write_json(&initial_path, &inference)?;
        inference
    };

    let revised_path = dir.join("revised.json");
    let final_path = dir.join("final.json");
    let mut revised: Option<RevisedEvidence> = None;
    let final_profile: AttributeProfile;

    if !config.toggles.summarization {
        if !fresh && final_path.exists() {
            final_profile = read_json(&final_path)?;
        } else {
            final_profile =
                decide_direct(&intra, &inter, agents, &log, &prompts.decision, taxonomy)?;
            write_json(&final_path, &final_profile)?;
        }
    } else if !config.toggles.inquiry_decision || initial.question.is_none() {
        // Short-circuit: the initial inference is the final result.
        let mut profile = initial.profile.clone();
        profile.fill_abstain();
        final_profile = profile;
        if fresh && revised_path.exists() {
            let _ = fs::remove_file(&revised_path);
        }
        write_json(&final_path, &final_profile)?;
    } else {
        let question = initial.question.as_deref().expect("question present");
        let evidence: RevisedEvidence = if !fresh && revised_path.exists() {
            read_json(&revised_path)?
        } else {
            fresh = true;
            let evidence = inquire(question, images, agents, &log, &prompts.inquiry)?;
            write_json(&revised_path, &evidence)?;
            evidence
        };
        if !fresh && final_path.exists() {
            final_profile = read_json(&final_path)?;
        } else {
            final_profile = decide(
                &initial,
                &evidence,
                agents,
                &log,
                &prompts.decision,
                taxonomy,
            )?;
            write_json(&final_path, &final_profile)?;
        }
        revised = Some(evidence);
    }

    let records = log.records();
    write_json(&dir.join("calls.json"), &records)?;
    let mut call_counts: BTreeMap<AgentRole, usize> = BTreeMap::new();
    for record in &records {
        *call_counts.entry(record.role).or_default() += 1;
    }
    Ok(PipelineRun {
        individual_id: record.individual_id.clone(),
        config: config.clone(),
        intra,
        inter,
        initial,
        revised,
        final_profile,
        call_counts,
        wall_time_ms: started.elapsed().as_millis() as u64,
    })
}

/// The strong-prompt baseline: a single VLM call over ALL images requesting
/// every attribute in the structured format, recorded as a degenerate run.
pub fn run_baseline_strong_prompt(
    record: &IndividualRecord,
    agents: &PipelineAgents,
    prompts: &PromptSet,
    config: &PipelineConfig,
    taxonomy: &[AttributeSpec],
) -> Result<PipelineRun, PipelineError> {
    let started = Instant::now();
    let dir = config.persist_dir.join(&record.individual_id);
    fs::create_dir_all(&dir).map_err(|e| PipelineError::Io {
        path: dir.clone(),
        detail: e.to_string(),
    })?;
    let log = CallLog::new();
    let final_path = dir.join("final.json");
    let final_profile: AttributeProfile = if final_path.exists() {
        read_json(&final_path)?
    } else {
        let request = assemble(
            &prompts.strong,
            &profile_bindings(taxonomy),
            &[],
            &record.images,
        )
        .map_err(PipelineError::agent("strong prompt"))?;
        let (parsed, _raw) = send_profile_request(
            agents.vlm,
            agents.cache,
            &log,
            request,
            taxonomy,
            "strong prompt",
            false,
        )?;
        let mut profile = parsed.profile;
        profile.fill_abstain();
        write_json(&final_path, &profile)?;
        profile
    };
    let records = log.records();
    write_json(&dir.join("calls.json"), &records)?;
    let mut call_counts: BTreeMap<AgentRole, usize> = BTreeMap::new();
    for rec in &records {
        *call_counts.entry(rec.role).or_default() += 1;
    }
    Ok(PipelineRun {
        individual_id: record.individual_id.clone(),
        config: config.clone(),
        intra: IntraFindings::default(),
        inter: InterFindings::default(),
        initial: InitialInference {
            profile: final_profile.clone(),
            question: None,
            raw_text: String::new(),
        },
        revised: None,
        final_profile,
        call_counts,
        wall_time_ms: started.elapsed().as_millis() as u64,
    })
}
