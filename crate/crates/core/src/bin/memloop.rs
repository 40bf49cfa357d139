use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use memloop::ama::{run_corpus, Agents, RunArtifacts};
use memloop::bench::evaluate_run;
use memloop::canonical;
use memloop::config::RunConfig;
use memloop::dialogue::{load_corpus, CorpusFormat};
use memloop::embedding::{Embedder, EmbeddingBackend, LocalEmbedder, RemoteEmbedder};
use memloop::llm::{ChatBackend, Gateway, RecordingBackend, RemoteBackend, RemoteSettings, ScriptedBackend};
use memloop::metrics::render_table;
use memloop::persist::{self, corpus_digest, load_manifest, load_state, save_state, write_native, RunManifest};
use memloop::prompts::PromptSet;

/// Self-adapting conversational memory: build, adapt, and evaluate.
#[derive(Parser)]
#[command(name = "memloop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a corpus to native JSON and print its category counts.
    Ingest(IngestArgs),
    /// Construct memory for every dialogue without adaptation.
    Build(RunArgs),
    /// Construct memory and run the adaptation loop.
    Adapt(RunArgs),
    /// Answer the benchmark questions from a run's stores and score them.
    Eval(EvalArgs),
    /// Print the pass-rate evolution and metrics of a finished run.
    Report(ReportArgs),
    /// Replay the bundled Jon/Gina case study.
    Demo,
}

#[derive(Args)]
struct IngestArgs {
    /// Source corpus file.
    #[arg(long)]
    input: PathBuf,
    /// Source format.
    #[arg(long, default_value = "locomo")]
    format: CorpusFormat,
    /// Where to write the native corpus JSON.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// OpenAI-compatible HTTP endpoint from MEMLOOP_BASE_URL / MEMLOOP_API_KEY.
    Remote,
    /// Serve responses from --replay; a missing entry is an error.
    Replay,
    /// Serve from --replay when recorded, otherwise call the remote and append.
    Record,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedderKind {
    Local,
    Remote,
}

#[derive(Args)]
struct BackendArgs {
    /// Model backend; defaults to replay when --replay is given, else remote.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Replay file (JSON lines) for the replay and record backends.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Config file with the shape of run.json's config_snapshot.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prompt template file replacing the bundled set.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Embedding backend.
    #[arg(long, value_enum)]
    embedder: Option<EmbedderKind>,
    /// Seed for the local embedder's hashing.
    #[arg(long)]
    seed: Option<u64>,
    /// Chat model name for every role.
    #[arg(long)]
    model: Option<String>,
    /// Dialogues processed concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct RunArgs {
    /// Corpus file.
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus format.
    #[arg(long, default_value = "native")]
    format: CorpusFormat,
    /// Output run directory.
    #[arg(long)]
    run_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Question-answer probes per session.
    #[arg(long)]
    qa_per_session: Option<usize>,
    /// Memory entries retrieved per question.
    #[arg(long)]
    retrieval_k: Option<usize>,
    /// Adaptation rounds per session.
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Rebuild a session's memory when its pass rate ends below this value (0 disables).
    #[arg(long)]
    reconstruction_threshold: Option<f64>,
    /// Do not add adapter supplements to memory.
    #[arg(long)]
    no_content_update: bool,
    /// Do not amend the extraction strategy.
    #[arg(long)]
    no_strategy_update: bool,
    /// Use the minimal challenger prompt instead of the structured one.
    #[arg(long)]
    unguided_questions: bool,
    /// Carry one strategy across all dialogues (runs them in order).
    #[arg(long)]
    shared_strategy: bool,
    /// Log challenger gold answers that barely overlap the session.
    #[arg(long)]
    audit_gold: bool,
    /// Keep dialogues already present in --run-dir and run only the rest.
    #[arg(long)]
    resume: bool,
    /// Record wall-clock start and finish times in run.json.
    #[arg(long)]
    timestamps: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory produced by adapt or build.
    #[arg(long)]
    run_dir: PathBuf,
    /// Corpus holding the benchmark questions.
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus format.
    #[arg(long, default_value = "native")]
    format: CorpusFormat,
    /// Also score answers with the LLM judge.
    #[arg(long)]
    judge: bool,
    /// Directory for eval.json, eval.txt and answers.json (default: the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory.
    #[arg(long)]
    run_dir: PathBuf,
}

/// A run that finished with some failures (exit 1).
#[derive(Debug)]
struct Partial(String);

impl std::fmt::Display for Partial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Partial {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Build(a) => adapt(a, true),
        Command::Adapt(a) => adapt(a, false),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Demo => demo(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Partial>() => {
            eprintln!("memloop: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("memloop: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn ingest(args: IngestArgs) -> Result<()> {
    let corpus = load_corpus(&args.input, args.format)?;
    std::fs::write(&args.output, write_native(&corpus)).with_context(|| args.output.display().to_string())?;
    println!("{}", corpus.category_counts());
    Ok(())
}

fn load_config(args: &BackendArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| anyhow!(e))?,
        None => RunConfig::default(),
    };
    if let Some(kind) = args.embedder {
        config.embedding.backend = match kind {
            EmbedderKind::Local => EmbeddingBackend::Local,
            EmbedderKind::Remote => EmbeddingBackend::Remote,
        };
    }
    if let Some(seed) = args.seed {
        config.embedding.seed = seed;
    }
    if let Some(model) = &args.model {
        config.llm.model = model.clone();
    }
    Ok(config)
}

fn make_gateway(args: &BackendArgs, config: &RunConfig) -> Result<Gateway> {
    let prompts = match &args.prompts {
        Some(p) => PromptSet::from_file(p).with_context(|| p.display().to_string())?,
        None => PromptSet::default(),
    };
    let kind = args.backend.unwrap_or(if args.replay.is_some() { BackendKind::Replay } else { BackendKind::Remote });
    let replay_path = || args.replay.as_deref().ok_or_else(|| anyhow!("--replay is required for this backend"));
    let backend: Arc<dyn ChatBackend> = match kind {
        BackendKind::Remote => Arc::new(RemoteBackend::from_env(config.llm.clone())?),
        BackendKind::Replay => Arc::new(ScriptedBackend::from_file(replay_path()?)?),
        BackendKind::Record => {
            Arc::new(RecordingBackend::to_file(RemoteBackend::from_env(config.llm.clone())?, replay_path()?)?)
        }
    };
    Ok(Gateway::new(backend, config.llm.clone(), prompts))
}

fn make_embedder(config: &RunConfig) -> Result<Box<dyn Embedder>> {
    let e = &config.embedding;
    Ok(match e.backend {
        EmbeddingBackend::Local => Box::new(LocalEmbedder::new(e.dimension, e.seed)),
        EmbeddingBackend::Remote => Box::new(RemoteEmbedder::new(
            RemoteSettings::from_env(config.llm.retry.clone())?,
            e.model.clone(),
            e.dimension,
        )?),
    })
}

fn apply_run_flags(args: &RunArgs, config: &mut RunConfig, build_only: bool) {
    let ama = &mut config.ama;
    if let Some(k) = args.qa_per_session {
        ama.qa_per_session = k;
    }
    if build_only {
        ama.qa_per_session = 0;
    }
    if let Some(k) = args.retrieval_k {
        ama.retrieval_k = k;
    }
    if let Some(r) = args.max_rounds {
        ama.max_rounds = r;
    }
    if let Some(t) = args.reconstruction_threshold {
        ama.reconstruction_pass_threshold = t;
    }
    ama.enable_content_update &= !args.no_content_update;
    ama.enable_strategy_update &= !args.no_strategy_update;
    ama.guided_questions &= !args.unguided_questions;
    ama.shared_strategy |= args.shared_strategy;
    ama.audit_gold_answers |= args.audit_gold;
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn pass_cell(p: Option<memloop::ama::PassCount>) -> String {
    match p.and_then(|p| p.rate().map(|r| (p, r))) {
        Some((p, r)) => format!("{}/{} ({:.2}%)", p.passed, p.total, r * 100.0),
        None => "-".into(),
    }
}

fn evolution_table(artifacts: &RunArtifacts) -> String {
    let width = artifacts.dialogues.iter().map(|d| d.dialogue_id.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{:<width$}  {:<18}  {:<18}  {}\n", "dialogue", "pre", "post", "strategy");
    for d in &artifacts.dialogues {
        let status = match &d.error {
            Some(e) => format!("error: {e}"),
            None => format!("v{}", d.strategy.version),
        };
        out.push_str(&format!("{:<width$}  {:<18}  {:<18}  {status}\n", d.dialogue_id, pass_cell(d.pre()), pass_cell(d.post())));
    }
    out
}

fn adapt(args: RunArgs, build_only: bool) -> Result<()> {
    let mut config = load_config(&args.backend)?;
    apply_run_flags(&args, &mut config, build_only);
    let mut corpus = load_corpus(&args.corpus, args.format)?;
    let digest = corpus_digest(&corpus);
    let gateway = make_gateway(&args.backend, &config)?;
    let embedder = make_embedder(&config)?;
    let agents = Agents { gateway: &gateway, embedder: embedder.as_ref(), store_config: &config.store };

    let mut kept = RunArtifacts::default();
    if args.resume && args.run_dir.join(persist::MANIFEST_FILE).is_file() {
        let previous = load_manifest(&args.run_dir)?;
        if previous.corpus_digest != digest || previous.config_snapshot != config {
            bail!("--resume: {} was produced from a different corpus or config", args.run_dir.display());
        }
        kept = load_state(&args.run_dir)?;
        kept.dialogues.retain(|d| d.error.is_none());
        corpus.dialogues.retain(|d| !kept.dialogues.iter().any(|k| k.dialogue_id == d.dialogue_id));
    }

    let started = args.timestamps.then(now);
    let fresh = run_corpus(&corpus, &config.ama, agents, args.backend.parallel)?;
    let mut artifacts = kept;
    artifacts.dialogues.extend(fresh.dialogues);
    let full_corpus = load_corpus(&args.corpus, args.format)?;
    artifacts.dialogues.sort_by_key(|d| full_corpus.dialogues.iter().position(|c| c.dialogue_id == d.dialogue_id));

    let mut manifest = RunManifest::new(config, digest);
    manifest.started_at = started;
    manifest.finished_at = args.timestamps.then(now);
    save_state(&args.run_dir, manifest, &artifacts)?;

    print!("{}", evolution_table(&artifacts));
    let failed: Vec<&str> =
        artifacts.dialogues.iter().filter(|d| d.error.is_some()).map(|d| d.dialogue_id.as_str()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let message = format!("{} of {} dialogues failed: {}", failed.len(), artifacts.dialogues.len(), failed.join(", "));
    if failed.len() == artifacts.dialogues.len() {
        bail!(Partial(message));
    }
    warn!("{message}");
    Ok(())
}

fn require_run_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("run directory {} does not exist", path.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    require_run_dir(&args.run_dir)?;
    let manifest = load_manifest(&args.run_dir)?;
    let artifacts = load_state(&args.run_dir)?;
    let corpus = load_corpus(&args.corpus, args.format)?;
    let mut config = manifest.config_snapshot;
    if let Some(model) = &args.backend.model {
        config.llm.model = model.clone();
    }
    let gateway = make_gateway(&args.backend, &config)?;
    let embedder = make_embedder(&config)?;
    let output = evaluate_run(
        &corpus,
        &artifacts,
        config.ama.retrieval_k,
        args.judge,
        &gateway,
        embedder.as_ref(),
        args.backend.parallel,
    )?;
    if args.judge && output.report.overall.judge_mean.is_none() {
        eprintln!("warning: no judge scores were available; the judge row is omitted");
    } else if output.judge_failures > 0 {
        eprintln!("warning: {} answers have no judge score", output.judge_failures);
    }
    let out_dir = args.out.unwrap_or(args.run_dir);
    std::fs::create_dir_all(&out_dir).with_context(|| out_dir.display().to_string())?;
    let table = render_table(&output.report);
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        std::fs::write(&path, text).with_context(|| path.display().to_string())
    };
    write("eval.json", canonical::to_pretty(&output.report)?)?;
    write("eval.txt", table.clone())?;
    write("answers.json", canonical::to_pretty(&output.answers)?)?;
    print!("{table}");
    if output.answer_failures > 0 {
        bail!(Partial(format!("{} questions could not be answered", output.answer_failures)));
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    require_run_dir(&args.run_dir)?;
    let manifest = load_manifest(&args.run_dir)?;
    let artifacts = load_state(&args.run_dir)?;
    println!("run {} (corpus {})", manifest.run_id, &manifest.corpus_digest[..12.min(manifest.corpus_digest.len())]);
    print!("{}", evolution_table(&artifacts));
    let eval_txt = args.run_dir.join("eval.txt");
    if eval_txt.is_file() {
        println!();
        print!("{}", std::fs::read_to_string(&eval_txt).with_context(|| eval_txt.display().to_string())?);
    }
    Ok(())
}

fn demo() -> Result<()> {
    let outcome = memloop::demo::run_demo()?;
    print!("{}", outcome.transcript);
    Ok(())
}
