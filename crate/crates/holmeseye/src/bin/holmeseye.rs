//! Operator entry point: validate datasets, run inference strategies over a
//! manifest, score persisted runs against ground truth, and synthesize
//! fixtures. Progress goes to stderr; machine-readable paths go to stdout so
//! run directories can be piped straight into `score`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use holmeseye::agents::{
    generate_guidance, load_backend_configs, AgentBackend, BackendConfig, CacheStore,
    GuidanceKind, HttpBackend, PromptSet, Script, ScriptedBackend,
};
use holmeseye::dataset::{
    self, load_manifest, subset_images, synthesize_fixture, validate_manifest, DatasetManifest,
    IndividualRecord,
};
use holmeseye::pipeline::{
    run_baseline_strong_prompt, run_pipeline, PhaseToggles, PipelineAgents, PipelineConfig,
    PipelineError, PipelineRun,
};
use holmeseye::scoring::{
    aggregate, render_table, score_profile, Judge, RelativeErrorMode, RenderedTable, ScoreError,
    TableLayout, TableSeries,
};
use holmeseye::taxonomy::AttributeProfile;

const EXIT_FINDINGS: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "holmeseye", version, about = "Attribute-inference engine and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset manifest: hashes, image files, ground-truth coverage.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Also require the published collection size (10 images each).
        #[arg(long)]
        strict: bool,
    },
    /// Execute a strategy over every individual in a manifest.
    Run(RunArgs),
    /// Score persisted run directories against ground truth.
    Score(ScoreArgs),
    /// Synthesize a deterministic dataset fixture.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of individuals.
        #[arg(long, default_value_t = 3)]
        individuals: usize,
        /// Images per individual.
        #[arg(long, default_value_t = 10)]
        images: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    backends: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, value_enum, default_value_t = Strategy::Holmeseye)]
    strategy: Strategy,
    #[arg(long, default_value_t = 3)]
    group_size: usize,
    /// Subset each individual to this many images (seeded, order-preserving).
    #[arg(long)]
    images: Option<usize>,
    #[arg(long, value_enum)]
    ablate: Option<Ablation>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Run directory; phase files persist under <out>/<individual_id>/.
    #[arg(long)]
    out: PathBuf,
    /// Bound on concurrent individuals and on VLM calls within one individual.
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    /// Required for any non-scripted backend, to prevent accidental API spend.
    #[arg(long)]
    live: bool,
    /// Backend id for vision calls (default: first backend in backends.json).
    #[arg(long)]
    vlm_backend: Option<String>,
    /// Backend id for text-only calls (default: last backend in backends.json).
    #[arg(long)]
    llm_backend: Option<String>,
    /// Response cache directory shared across runs.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Run directories; with two, the first is the baseline of the delta row.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    backends: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    /// Judge backend id. Default: first backend that differs from the run's
    /// LLM, falling back to the LLM itself.
    #[arg(long)]
    judge_backend: Option<String>,
    /// Use the run's own LLM backend as judge (self-judging protocol).
    #[arg(long)]
    self_judge: bool,
    /// Normalize quantitative deviations by the truth value instead of the
    /// scale width.
    #[arg(long)]
    truth_relative: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    live: bool,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum Strategy {
    #[value(name = "holmeseye")]
    #[serde(rename = "holmeseye")]
    Holmeseye,
    #[value(name = "strong_prompt")]
    #[serde(rename = "strong_prompt")]
    StrongPrompt,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Ablation {
    NoExtraction,
    NoAnalysis,
    NoSummarization,
    NoInquiryDecision,
}

impl Ablation {
    fn apply(self, toggles: &mut PhaseToggles) {
        match self {
            Ablation::NoExtraction => toggles.extraction = false,
            Ablation::NoAnalysis => toggles.analysis = false,
            // dropping the summary leaves nothing to revise, so the inquiry
            // loop is skipped too and findings feed the decision directly
            Ablation::NoSummarization => toggles.summarization = false,
            Ablation::NoInquiryDecision => toggles.inquiry_decision = false,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Ablation::NoExtraction => "w/o Extraction",
            Ablation::NoAnalysis => "w/o Analysis",
            Ablation::NoSummarization => "w/o Summarization",
            Ablation::NoInquiryDecision => "w/o Inquiry and Decision",
        }
    }
}

/// Everything needed to reproduce a run, persisted into its output directory.
#[derive(Serialize, Deserialize)]
struct ExperimentSpec {
    manifest: PathBuf,
    backends: PathBuf,
    prompts: PathBuf,
    strategy: Strategy,
    pipeline: PipelineConfig,
    image_count: Option<usize>,
    ablation: Option<Ablation>,
    seed: u64,
    out: PathBuf,
}

impl ExperimentSpec {
    fn series_name(&self) -> String {
        match (self.strategy, self.ablation) {
            (Strategy::StrongPrompt, _) => "Strong prompt".to_string(),
            (Strategy::Holmeseye, Some(a)) => a.label().to_string(),
            (Strategy::Holmeseye, None) => "HolmesEye".to_string(),
        }
    }
}

enum CliError {
    Findings(String),
    Usage(String),
    Backend(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Findings(_) => EXIT_FINDINGS,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Findings(m) | CliError::Usage(m) | CliError::Backend(m) => m,
        }
    }
}

impl From<dataset::DatasetError> for CliError {
    fn from(e: dataset::DatasetError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<holmeseye::agents::AgentError> for CliError {
    fn from(e: holmeseye::agents::AgentError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Agent { .. } | PipelineError::UnparseableOutput { .. } => {
                CliError::Backend(e.to_string())
            }
            other => CliError::Findings(other.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Agent { .. } | ScoreError::UnparseableJudgment { .. } => {
                CliError::Backend(e.to_string())
            }
            other => CliError::Findings(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Findings(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { manifest, strict } => cmd_validate(&manifest, strict),
        Command::Run(args) => cmd_run(&args),
        Command::Score(args) => cmd_score(&args),
        Command::Fixture {
            out,
            seed,
            individuals,
            images,
        } => cmd_fixture(&out, seed, individuals, images),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn cmd_validate(manifest_path: &Path, strict: bool) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let report = validate_manifest(&manifest, strict);
    for finding in &report.findings {
        eprintln!("finding: {finding:?}");
    }
    eprintln!(
        "{} individuals, {} images, {} findings",
        manifest.individuals.len(),
        manifest.total_images(),
        report.findings.len()
    );
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Findings(format!(
            "{} validation findings",
            report.findings.len()
        )))
    }
}

fn cmd_fixture(out: &Path, seed: u64, individuals: usize, images: usize) -> Result<(), CliError> {
    if individuals == 0 || images == 0 {
        return Err(CliError::Usage(
            "fixture needs at least one individual and one image each".to_string(),
        ));
    }
    let manifest = synthesize_fixture(out, seed, individuals, images)?;
    eprintln!(
        "fixture: {} individuals x {} images, seed {seed}",
        manifest.individuals.len(),
        images
    );
    println!("{}", out.display());
    Ok(())
}

fn build_backend(
    config: &BackendConfig,
    backends_dir: &Path,
    image_root: &Path,
    live: bool,
) -> Result<Box<dyn AgentBackend>, CliError> {
    match config.kind.as_str() {
        "scripted" => {
            let rel = config.script_path.as_deref().ok_or_else(|| {
                CliError::Usage(format!(
                    "scripted backend {} has no script_path",
                    config.backend_id
                ))
            })?;
            let script = Script::load(&backends_dir.join(rel))?;
            Ok(Box::new(ScriptedBackend::new(
                config.backend_id.clone(),
                script,
            )))
        }
        "http" => {
            if !live {
                return Err(CliError::Usage(format!(
                    "backend {} is live; pass --live to allow network calls",
                    config.backend_id
                )));
            }
            Ok(Box::new(HttpBackend::new(config.clone(), image_root)?))
        }
        other => Err(CliError::Usage(format!(
            "backend {} has unknown kind {other:?}",
            config.backend_id
        ))),
    }
}

fn find_config<'a>(
    configs: &'a [BackendConfig],
    id: &str,
) -> Result<&'a BackendConfig, CliError> {
    configs
        .iter()
        .find(|c| c.backend_id == id)
        .ok_or_else(|| CliError::Usage(format!("backend id {id:?} not in backends file")))
}

fn load_records(
    manifest: &DatasetManifest,
    image_count: Option<usize>,
    seed: u64,
) -> Result<Vec<IndividualRecord>, CliError> {
    manifest
        .individuals
        .iter()
        .map(|record| match image_count {
            Some(k) => subset_images(record, k, seed).map_err(CliError::from),
            None => Ok(record.clone()),
        })
        .collect()
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    if args.parallel == 0 {
        return Err(CliError::Usage("--parallel must be at least 1".to_string()));
    }
    let manifest = load_manifest(&args.manifest)?;
    let prompts = PromptSet::load(&args.prompts)?;
    let configs = load_backend_configs(&args.backends)?;
    if configs.is_empty() {
        return Err(CliError::Usage("backends file lists no backends".to_string()));
    }
    let backends_dir = args.backends.parent().unwrap_or(Path::new(".")).to_path_buf();

    let vlm_id = args
        .vlm_backend
        .clone()
        .unwrap_or_else(|| configs[0].backend_id.clone());
    let llm_id = args
        .llm_backend
        .clone()
        .unwrap_or_else(|| configs[configs.len() - 1].backend_id.clone());
    let vlm = build_backend(
        find_config(&configs, &vlm_id)?,
        &backends_dir,
        &manifest.base_dir,
        args.live,
    )?;
    let llm = build_backend(
        find_config(&configs, &llm_id)?,
        &backends_dir,
        &manifest.base_dir,
        args.live,
    )?;
    let cache = match &args.cache {
        Some(dir) => Some(CacheStore::open(dir)?),
        None => None,
    };

    let mut toggles = PhaseToggles::default();
    if let Some(ablation) = args.ablate {
        ablation.apply(&mut toggles);
    }
    let config = PipelineConfig {
        group_size: args.group_size,
        toggles,
        vlm_backend_id: vlm_id.clone(),
        llm_backend_id: llm_id.clone(),
        max_parallel_vlm_calls: args.parallel,
        persist_dir: args.out.clone(),
    };
    config.validate()?;

    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let spec = ExperimentSpec {
        manifest: args.manifest.clone(),
        backends: args.backends.clone(),
        prompts: args.prompts.clone(),
        strategy: args.strategy,
        pipeline: config.clone(),
        image_count: args.images,
        ablation: args.ablate,
        seed: args.seed,
        out: args.out.clone(),
    };
    let spec_path = args.out.join("experiment_spec.json");
    let spec_json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    std::fs::write(&spec_path, spec_json + "\n").map_err(|e| io_err(&spec_path, e))?;

    let taxonomy = &manifest.taxonomy.attributes;
    let records = load_records(&manifest, args.images, args.seed)?;

    // guidance is shared across individuals: one call per enabled phase kind
    let (extract_guidance, analyze_guidance) = match args.strategy {
        Strategy::Holmeseye => {
            let ex = if config.toggles.extraction {
                generate_guidance(
                    llm.as_ref(),
                    cache.as_ref(),
                    &prompts.guide,
                    taxonomy,
                    &manifest.taxonomy.version,
                    GuidanceKind::Extraction,
                )?
            } else {
                String::new()
            };
            let an = if config.toggles.analysis {
                generate_guidance(
                    llm.as_ref(),
                    cache.as_ref(),
                    &prompts.guide,
                    taxonomy,
                    &manifest.taxonomy.version,
                    GuidanceKind::Analysis,
                )?
            } else {
                String::new()
            };
            (ex, an)
        }
        Strategy::StrongPrompt => (String::new(), String::new()),
    };

    let agents = PipelineAgents {
        vlm: vlm.as_ref(),
        llm: llm.as_ref(),
        cache: cache.as_ref(),
    };

    let run_one = |record: &IndividualRecord| -> Result<PipelineRun, PipelineError> {
        match args.strategy {
            Strategy::Holmeseye => run_pipeline(
                record,
                &agents,
                &prompts,
                &config,
                taxonomy,
                &extract_guidance,
                &analyze_guidance,
            ),
            Strategy::StrongPrompt => {
                run_baseline_strong_prompt(record, &agents, &prompts, &config, taxonomy)
            }
        }
    };

    let outcomes = parallel_map(&records, args.parallel, |record| {
        let result = run_one(record);
        match &result {
            Ok(run) => eprintln!(
                "{}: done in {} ms, calls {:?}",
                record.individual_id, run.wall_time_ms, run.call_counts
            ),
            Err(e) => eprintln!("{}: failed: {e}", record.individual_id),
        }
        result
    });

    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    let mut failures = Vec::new();
    for (record, outcome) in records.iter().zip(outcomes) {
        match outcome {
            Ok(run) => {
                for (role, count) in &run.call_counts {
                    *totals.entry(role.as_str().to_string()).or_default() += count;
                }
            }
            Err(e) => failures.push((record.individual_id.clone(), e)),
        }
    }
    eprintln!("call totals: {totals:?}");
    if !failures.is_empty() {
        let summary = failures
            .iter()
            .map(|(id, e)| format!("{id}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        // completed individuals stay persisted; report the rest and bail
        return Err(CliError::from(failures.remove(0).1)).map_err(|e| match e {
            CliError::Backend(_) => CliError::Backend(summary),
            _ => CliError::Findings(summary),
        });
    }
    println!("{}", args.out.display());
    Ok(())
}

/// Order-preserving bounded-parallel map over individuals.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    bound: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..bound.min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("slot filled"))
        .collect()
}

#[derive(Serialize)]
struct ReportDoc {
    /// The quantitative metric normalizes |pred - truth| by this choice.
    relative_error_mode: RelativeErrorMode,
    judge_backend: String,
    series: Vec<TableSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<RenderedTable>,
}

fn read_run_spec(run_dir: &Path) -> Result<ExperimentSpec, CliError> {
    let path = run_dir.join("experiment_spec.json");
    let raw = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&raw).map_err(|e| io_err(&path, e))
}

fn read_final_profile(run_dir: &Path, individual_id: &str) -> Result<AttributeProfile, CliError> {
    let path = run_dir.join(individual_id).join("final.json");
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Findings(format!("missing run output {}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| io_err(&path, e))
}

fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let prompts = PromptSet::load(&args.prompts)?;
    let configs = load_backend_configs(&args.backends)?;
    let backends_dir = args.backends.parent().unwrap_or(Path::new(".")).to_path_buf();
    let taxonomy = &manifest.taxonomy.attributes;
    let mode = if args.truth_relative {
        RelativeErrorMode::TruthRelative
    } else {
        RelativeErrorMode::ScaleWidth
    };

    let specs: Vec<ExperimentSpec> = args
        .runs
        .iter()
        .map(|dir| read_run_spec(dir))
        .collect::<Result<_, _>>()?;

    // default judge: a backend other than the runs' own LLM, to keep the
    // grader independent; --self-judge restores the self-judging protocol
    let run_llm = &specs[0].pipeline.llm_backend_id;
    let judge_id = if args.self_judge {
        run_llm.clone()
    } else if let Some(id) = &args.judge_backend {
        id.clone()
    } else {
        configs
            .iter()
            .map(|c| c.backend_id.clone())
            .find(|id| id != run_llm)
            .unwrap_or_else(|| run_llm.clone())
    };
    let judge_backend = build_backend(
        find_config(&configs, &judge_id)?,
        &backends_dir,
        &manifest.base_dir,
        args.live,
    )?;
    let cache = match &args.cache {
        Some(dir) => Some(CacheStore::open(dir)?),
        None => None,
    };
    let judge = Judge {
        backend: judge_backend.as_ref(),
        cache: cache.as_ref(),
        template: &prompts.judge,
    };

    let mut series = Vec::new();
    for (run_dir, spec) in args.runs.iter().zip(&specs) {
        let mut reports = Vec::new();
        for record in &manifest.individuals {
            let predicted = read_final_profile(run_dir, &record.individual_id)?;
            reports.push(score_profile(
                &predicted,
                &record.ground_truth,
                taxonomy,
                &judge,
                mode,
            )?);
        }
        let report = aggregate(&reports)?;
        eprintln!("{}: overall {:.1}", run_dir.display(), report.overall);
        series.push(TableSeries {
            name: spec.series_name(),
            report,
        });
    }

    let table = match series.len() {
        2 => Some(render_table(TableLayout::Main, &series)?),
        5 => {
            // full configuration renders last
            series.sort_by_key(|s| s.name == "HolmesEye");
            if let Some(full) = series.last_mut() {
                if full.name == "HolmesEye" {
                    full.name = "HolmesEye (full)".to_string();
                }
            }
            Some(render_table(TableLayout::Ablation, &series)?)
        }
        _ => None,
    };

    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let doc = ReportDoc {
        relative_error_mode: mode,
        judge_backend: judge_id.clone(),
        series,
        table,
    };
    let json_path = args.out.join("report.json");
    let json = serde_json::to_string_pretty(&doc).expect("report serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| io_err(&json_path, e))?;

    let mut md = String::new();
    md.push_str("# Score report\n\n");
    md.push_str(&format!(
        "Relative-error metric assumption: deviation normalized by {}.\n",
        match mode {
            RelativeErrorMode::ScaleWidth => "the scale width (max - min)",
            RelativeErrorMode::TruthRelative => "the true value",
        }
    ));
    md.push_str(&format!("Judge backend: {judge_id}\n\n"));
    match &doc.table {
        Some(table) => md.push_str(&table.text),
        None => {
            for s in &doc.series {
                md.push_str(&format!("{}: overall {:.1}\n", s.name, s.report.overall));
            }
        }
    }
    let md_path = args.out.join("report.md");
    std::fs::write(&md_path, md).map_err(|e| io_err(&md_path, e))?;

    println!("{}", json_path.display());
    println!("{}", md_path.display());
    Ok(())
}
