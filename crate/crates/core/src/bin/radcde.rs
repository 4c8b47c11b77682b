//! Command-line front end: extraction, the LLM baseline, augmentation and evaluation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use radcde::augment::{augment, AugmentError, TemplateSet};
use radcde::embedding::EmbeddingBackend;
use radcde::eval::{cross_compare, fisher_exact, mcnemar_exact, per_feature_csv, score_phase, EvalError, Phase, StatsError};
use radcde::llm::{LlmBaseline, LlmClient, LlmError, PromptMode, RemoteLlm, RemoteLlmConfig, ReplayClient};
use radcde::parser::ReportParser;
use radcde::pipeline::{build_corpus, fit_builtin, Pipeline, PipelineError};
use radcde::record::{grid, read_jsonl, read_reports, to_jsonl, write_atomic, RecordError, ResultRecord};
use radcde::registry::{AnnotatedExample, Registry, RegistryError};
use radcde::runner::{run_extraction, run_llm, stamp, BackendKind, RunManifest, Settings, SettingsError};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Registry(_) => "registry",
            CliError::Settings(_) => "config",
            CliError::Record(_) | CliError::Io { .. } => "io",
            CliError::Pipeline(_) => "pipeline",
            CliError::Llm(_) => "llm",
            CliError::Augment(_) => "augment",
            CliError::Eval(_) => "evaluation",
            CliError::Stats(_) => "statistics",
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
        }
    }

    fn exit_code(&self) -> u8 {
        if matches!(self, CliError::Usage(_)) {
            2
        } else {
            1
        }
    }
}

#[derive(Parser)]
#[command(name = "radcde", version, about = "Chest radiograph report extraction to Common Data Elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the retrieval pipeline over reports.
    Extract(ExtractArgs),
    /// Run the prompted-LLM baseline over reports.
    LlmExtract(LlmArgs),
    /// Write template exemplars for registry values no exemplar covers.
    Augment(AugmentArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Contrast two systems' correctness on the same instances.
    Compare(CompareArgs),
    /// Registry statistics, or a trace of one sentence or prompt.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct Common {
    /// Registry JSON; the shipped chest radiograph registry when omitted.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// TOML settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "embedding-backend", value_enum)]
    embedding_backend: Option<Backend>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Manifest path; defaults to `<out>.manifest.json`, or stderr without --out.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Builtin,
    Remote,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    /// Reports as `.jsonl` of {report_id, text}, or one plain-text report.
    #[arg(long)]
    input: PathBuf,
    /// Result records as JSON lines; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cosine a sentence needs against a class exemplar (default 0.9).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long = "bm25-k1")]
    bm25_k1: Option<f64>,
    #[arg(long = "bm25-b")]
    bm25_b: Option<f64>,
    /// Use the registry exemplars without template augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Write per-sentence retrieval candidates as JSON lines.
    #[arg(long)]
    dump_candidates: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fewshot,
    Zeroshot,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClientKind {
    Remote,
    Replay,
}

#[derive(Args)]
struct LlmArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prompt with retrieved examples or without (default fewshot).
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum, default_value = "replay")]
    client: ClientKind,
    /// Replay file: JSON map of sha256(prompt) to response text.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Prompt size limit in estimated tokens (default 8000).
    #[arg(long)]
    token_budget: Option<usize>,
    /// Similarity needed for an exemplar to enter the prompt.
    #[arg(long)]
    fewshot_threshold: Option<f64>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Exemplars as JSON lines; the registry's own when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Template JSON; the shipped templates when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Extraction,
    Standardization,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Phase {
        match p {
            PhaseArg::Extraction => Phase::Extraction,
            PhaseArg::Standardization => Phase::Standardization,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "extraction")]
    phase: PhaseArg,
    /// Also write per-feature F1 as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Column name in the CSV.
    #[arg(long, default_value = "System")]
    system_name: String,
    /// Summary JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    pred_a: PathBuf,
    #[arg(long)]
    pred_b: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value = "extraction")]
    phase: PhaseArg,
    /// Add the exact McNemar test on the discordant cells.
    #[arg(long)]
    mcnemar: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Trace one sentence through retrieval and value mapping.
    #[arg(long, conflicts_with = "prompt")]
    sentence: Option<String>,
    /// Print the few-shot prompt built for a report file.
    #[arg(long)]
    prompt: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let body = json!({"error": "usage", "message": e.kind().to_string(), "detail": e.to_string()});
            eprintln!("{body}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Extract(a) => extract(a),
        Command::LlmExtract(a) => llm_extract(a),
        Command::Augment(a) => augment_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn load_registry(path: Option<&Path>, manifest: Option<&mut RunManifest>) -> Result<Registry, CliError> {
    match path {
        None => Ok(Registry::chest_xr()),
        Some(p) => {
            if let Some(m) = manifest {
                hash_input(m, p)?;
            }
            Ok(Registry::load(p)?)
        }
    }
}

fn hash_input(manifest: &mut RunManifest, path: &Path) -> Result<(), CliError> {
    manifest.input_file(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn settings(common: &Common) -> Result<Settings, CliError> {
    let mut s = Settings::load(common.config.as_deref())?;
    s.apply_process_env()?;
    if let Some(b) = common.embedding_backend {
        s.backend = match b {
            Backend::Builtin => BackendKind::Builtin,
            Backend::Remote => BackendKind::Remote,
        };
    }
    if let Some(j) = common.jobs {
        s.jobs = j;
    }
    Ok(s)
}

/// Write `text` to `out`, or stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(write_atomic(p, text)?),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

fn emit_manifest(manifest: &RunManifest, explicit: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let path = explicit.map(Path::to_path_buf).or_else(|| {
        out.map(|o| {
            let mut s = o.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    let text = manifest.to_json() + "\n";
    match path {
        Some(p) => Ok(write_atomic(p, &text)?),
        None => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn extract(a: ExtractArgs) -> Result<(), CliError> {
    let mut s = settings(&a.common)?;
    if let Some(t) = a.threshold {
        s.pipeline.threshold = t;
    }
    if let Some(k1) = a.bm25_k1 {
        s.pipeline.bm25.k1 = k1;
    }
    if let Some(b) = a.bm25_b {
        s.pipeline.bm25.b = b;
    }
    if a.no_augment {
        s.pipeline.augment = false;
    }
    let mut manifest = RunManifest::new("extract", &s);
    let registry = load_registry(a.common.registry.as_deref(), Some(&mut manifest))?;
    let reports = read_reports(&a.input)?;
    hash_input(&mut manifest, &a.input)?;
    let pipeline = match s.remote_backend()? {
        Some(backend) => Pipeline::with_backend(registry, backend, s.pipeline.clone())?,
        None => Pipeline::builtin(registry, s.pipeline.clone())?,
    };
    manifest.backend_id = Some(pipeline.backend().backend_id().to_string());
    let results = run_extraction(&pipeline, &reports, s.jobs)?;
    let digest = manifest.digest();
    if let Some(path) = &a.dump_candidates {
        let rows: Vec<serde_json::Value> = results
            .iter()
            .flat_map(|r| {
                r.candidates.iter().map(move |c| {
                    json!({"report_id": r.report_id, "sentence": r.sentences.get(c.sentence_ref), "candidates": c})
                })
            })
            .collect();
        write_atomic(path, &to_jsonl(&rows))?;
    }
    let records: Vec<ResultRecord> = results.iter().map(|r| ResultRecord::from_extraction(r, "pipeline")).collect();
    emit(a.out.as_deref(), &to_jsonl(&stamp(records, &digest)))?;
    emit_manifest(&manifest, a.common.manifest.as_deref(), a.out.as_deref())
}

fn llm_extract(a: LlmArgs) -> Result<(), CliError> {
    let mut s = settings(&a.common)?;
    if let Some(m) = a.mode {
        s.prompt.mode = match m {
            Mode::Fewshot => PromptMode::Fewshot,
            Mode::Zeroshot => PromptMode::Zeroshot,
        };
    }
    if let Some(b) = a.token_budget {
        s.prompt.token_budget = b;
    }
    if let Some(t) = a.fewshot_threshold {
        s.prompt.threshold = t;
    }
    if a.client == ClientKind::Replay && a.replay.is_none() {
        return Err(CliError::Usage("--client replay needs --replay <file>".into()));
    }
    let mut manifest = RunManifest::new("llm-extract", &s);
    let registry = load_registry(a.common.registry.as_deref(), Some(&mut manifest))?;
    let reports = read_reports(&a.input)?;
    hash_input(&mut manifest, &a.input)?;
    let client: Box<dyn LlmClient> = match a.client {
        ClientKind::Replay => {
            let path = a.replay.as_deref().expect("checked above");
            hash_input(&mut manifest, path)?;
            Box::new(ReplayClient::load(path)?)
        }
        ClientKind::Remote => {
            let cfg = RemoteLlmConfig::from_env().ok_or_else(|| CliError::Config("LLM_ENDPOINT is not set".into()))?;
            Box::new(RemoteLlm::new(cfg))
        }
    };
    let backend: Arc<dyn EmbeddingBackend> = match s.remote_backend()? {
        Some(b) => b,
        None => Arc::new(fit_builtin(&build_corpus(&registry, &TemplateSet::shipped(), true)?)),
    };
    let baseline = LlmBaseline::with_parts(Arc::new(registry), backend, ReportParser::default(), s.prompt.clone())?;
    manifest.backend_id = Some(baseline.backend().backend_id().to_string());
    manifest.client_id = Some(client.client_id().to_string());
    let results = run_llm(&baseline, client.as_ref(), &reports, s.jobs)?;
    let records: Vec<ResultRecord> = results.iter().map(|r| ResultRecord::from_llm(r, "llm")).collect();
    emit(a.out.as_deref(), &to_jsonl(&stamp(records, &manifest.digest())))?;
    emit_manifest(&manifest, a.common.manifest.as_deref(), a.out.as_deref())
}

fn augment_cmd(a: AugmentArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("augment", &json!({}));
    let registry = load_registry(a.registry.as_deref(), Some(&mut manifest))?;
    let corpus: Vec<AnnotatedExample> = match &a.corpus {
        Some(p) => {
            hash_input(&mut manifest, p)?;
            read_jsonl(p)?
        }
        None => registry.exemplars().to_vec(),
    };
    let templates = match &a.templates {
        Some(p) => {
            hash_input(&mut manifest, p)?;
            TemplateSet::load(p)?
        }
        None => TemplateSet::shipped(),
    };
    let added = augment(&registry, &registry.coverage(&corpus), &templates)?;
    emit(a.out.as_deref(), &to_jsonl(&added))?;
    emit_manifest(&manifest, a.manifest.as_deref(), a.out.as_deref())
}

/// Records completed against the registry, so sparse files score as defaults.
fn load_records(path: &Path, registry: &Registry, manifest: &mut RunManifest) -> Result<Vec<ResultRecord>, CliError> {
    hash_input(manifest, path)?;
    let mut records: Vec<ResultRecord> = read_jsonl(path)?;
    for r in &mut records {
        r.complete(registry)?;
    }
    Ok(records)
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let phase: Phase = a.phase.into();
    let mut manifest = RunManifest::new("evaluate", &json!({"phase": phase, "system_name": a.system_name}));
    let registry = load_registry(a.registry.as_deref(), Some(&mut manifest))?;
    let truth = load_records(&a.truth, &registry, &mut manifest)?;
    let pred = load_records(&a.pred, &registry, &mut manifest)?;
    let summary = score_phase(&grid(&pred, phase), &grid(&truth, phase), phase, &registry)?;
    let digest = manifest.digest();
    if let Some(csv) = &a.csv {
        write_atomic(csv, &per_feature_csv(&[(a.system_name.as_str(), &summary)]))?;
    }
    let mut body = serde_json::to_value(&summary).expect("serializable");
    body["manifest_digest"] = digest.into();
    emit(a.out.as_deref(), &pretty(&body))?;
    emit_manifest(&manifest, a.manifest.as_deref(), a.out.as_deref())
}

fn compare(a: CompareArgs) -> Result<(), CliError> {
    let phase: Phase = a.phase.into();
    let mut manifest = RunManifest::new("compare", &json!({"phase": phase, "mcnemar": a.mcnemar}));
    let registry = load_registry(a.registry.as_deref(), Some(&mut manifest))?;
    let truth = load_records(&a.truth, &registry, &mut manifest)?;
    let run_a = load_records(&a.pred_a, &registry, &mut manifest)?;
    let run_b = load_records(&a.pred_b, &registry, &mut manifest)?;
    let table = cross_compare(&grid(&run_a, phase), &grid(&run_b, phase), &grid(&truth, phase))?;
    let mut body = json!({
        "phase": phase,
        "table": table,
        "fisher_p": fisher_exact(&table)?,
        "manifest_digest": manifest.digest(),
    });
    if a.mcnemar {
        body["mcnemar_p"] = mcnemar_exact(&table).into();
    }
    emit(a.out.as_deref(), &pretty(&body))?;
    emit_manifest(&manifest, a.manifest.as_deref(), a.out.as_deref())
}

fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let registry = load_registry(a.registry.as_deref(), None)?;
    if let Some(sentence) = &a.sentence {
        let pipeline = Pipeline::builtin(registry, Default::default())?;
        let r = pipeline.extract_sentence("inspect", sentence)?;
        let reg = pipeline.registry();
        let changed: BTreeMap<&str, String> = r
            .assignments
            .iter()
            .filter(|x| reg.cde(&x.cde_id).is_some_and(|c| reg.default_value(c).to_string() != x.value.render()))
            .map(|x| (x.cde_id.as_str(), x.value.render()))
            .collect();
        let body = json!({"sentence": sentence, "candidates": r.candidates, "classes": r.class_sources, "assignments": changed, "diagnostics": r.diagnostics});
        return emit(None, &pretty(&body));
    }
    if let Some(path) = &a.prompt {
        let reports = read_reports(path)?;
        let baseline = LlmBaseline::builtin(registry, Default::default())?;
        let mut out = String::new();
        for r in &reports {
            out.push_str(&baseline.prompt(&r.report_id, &r.text)?.text());
            out.push('\n');
        }
        return emit(None, &out);
    }
    let human = registry.exemplars().iter().filter(|e| e.source == radcde::registry::ExampleSource::Human).count();
    let corpus = build_corpus(&registry, &TemplateSet::shipped(), true)?;
    let uncovered = radcde::augment::uncovered_pairs(&registry, registry.exemplars());
    let body = json!({
        "version": registry.version(),
        "cdes": registry.cdes().len(),
        "numeric_cdes": registry.cdes().iter().filter(|c| c.is_numeric()).count(),
        "features": registry.feature_names().len(),
        "feature_classes": registry.classes().len(),
        "exemplars": registry.exemplars().len(),
        "human_exemplars": human,
        "augmented_exemplars": corpus.len() - human,
        "uncovered_values_before_augmentation": uncovered.len(),
    });
    emit(None, &pretty(&body))
}
