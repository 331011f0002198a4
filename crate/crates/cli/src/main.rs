//! causeway: incident root-cause analysis at the command line.
//!
//! Exit codes are stable for scripting: 0 success, 1 usage error, 2 data
//! error, 3 reasoning backend unavailable.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use causeway_core::backend::{RemoteBackend, RuleBackend};
use causeway_core::config::Config;
use causeway_core::fixture::{self, FixtureProfile};
use causeway_core::funnel::FunnelError;
use causeway_core::ingest;
use causeway_core::kg::{KnowledgeGraph, NodeId};
use causeway_core::pipeline::{analyze_graph, reclassify};
use causeway_core::report::PipelineReport;
use causeway_core::scan::{self, ScanMatch, ScanSummary};
use causeway_core::ReasoningBackend;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(
    name = "causeway",
    version,
    about = "Root-cause analysis over an SDLC knowledge graph"
)]
struct Cli {
    /// Configuration file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker count for parallel stages.
    #[arg(long, global = true, default_value_t = 4)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a knowledge graph from a directory of input files.
    Ingest(IngestArgs),
    /// Run the five-whys funnel and classification over a graph.
    Analyze(AnalyzeArgs),
    /// Re-run classification over the chains saved in an analysis.
    Classify(ClassifyArgs),
    /// Scan a project corpus with defect rules.
    Scan(ScanArgs),
    /// Render a saved analysis as text, or re-emit it structured.
    Report(ReportArgs),
    /// Generate a synthetic fixture with a ground-truth manifest.
    GenFixture(GenFixtureArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Directory containing incidents.jsonl, changes.jsonl,
    /// deployments.jsonl, and manifest.jsonl.
    #[arg(long)]
    input_dir: PathBuf,
    /// Where to write the serialized graph.
    #[arg(long)]
    graph_out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Serialized graph produced by `ingest`.
    #[arg(long)]
    graph: PathBuf,
    /// Analyze one incident by node id (e.g. inc:I1).
    #[arg(long, conflicts_with = "all")]
    incident: Option<String>,
    /// Analyze every non-stub incident.
    #[arg(long)]
    all: bool,
    /// Reasoning backend: "rule" or a URL for a remote backend.
    #[arg(long, default_value = "rule")]
    backend: String,
    /// Where to write the structured analysis (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Structured analysis produced by `analyze`.
    #[arg(long)]
    analysis: PathBuf,
    /// Where to write the reclassified analysis (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    /// Corpus root; first-level directories are projects.
    #[arg(long)]
    corpus: PathBuf,
    /// Rule file: one JSON rule per line.
    #[arg(long)]
    rules: PathBuf,
    /// Where to write matches and summary (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Structured analysis produced by `analyze`.
    #[arg(long)]
    analysis: PathBuf,
    /// Output format.
    #[arg(long, default_value = "text", value_parser = ["text", "structured"])]
    format: String,
}

#[derive(Args)]
struct GenFixtureArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One of: recurrence, replay, reattribution, corpus.
    #[arg(long)]
    profile: String,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Failures mapped to exit codes; usage errors are clap's.
enum CmdError {
    Data(String),
    Backend(String),
}

impl CmdError {
    fn code(&self) -> u8 {
        match self {
            CmdError::Data(_) => EXIT_DATA,
            CmdError::Backend(_) => EXIT_BACKEND,
        }
    }

    fn message(&self) -> &str {
        match self {
            CmdError::Data(m) | CmdError::Backend(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CmdError {
    CmdError::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here as non-error kinds.
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match load_config(cli.config.as_deref()) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return ExitCode::from(e.code());
        }
    };
    let result = match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Analyze(args) => cmd_analyze(args, &config, cli.jobs),
        Command::Classify(args) => cmd_classify(args, &config),
        Command::Scan(args) => cmd_scan(args, cli.jobs),
        Command::Report(args) => cmd_report(args),
        Command::GenFixture(args) => cmd_gen_fixture(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CmdError> {
    match path {
        Some(path) => Config::load(path).map_err(data_err),
        None => Ok(Config::default()),
    }
}

fn write_out(out: Option<&Path>, content: &str) -> Result<(), CmdError> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph, CmdError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Data(format!("cannot read {}: {e}", path.display())))?;
    KnowledgeGraph::from_jsonl(&raw).map_err(data_err)
}

fn load_analysis(path: &Path) -> Result<PipelineReport, CmdError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Data(format!("cannot read {}: {e}", path.display())))?;
    PipelineReport::from_jsonl(&raw).map_err(data_err)
}

fn cmd_ingest(args: &IngestArgs) -> Result<(), CmdError> {
    let (graph, report) = ingest::ingest_dir(&args.input_dir).map_err(data_err)?;
    std::fs::write(&args.graph_out, graph.to_jsonl())
        .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", args.graph_out.display())))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs, config: &Config, jobs: usize) -> Result<(), CmdError> {
    if args.incident.is_none() && !args.all {
        return Err(CmdError::Data(
            "nothing to analyze: pass --incident <id> or --all".into(),
        ));
    }
    let graph = load_graph(&args.graph)?;
    let backend: Box<dyn ReasoningBackend> = match args.backend.as_str() {
        "rule" => Box::new(RuleBackend::with_default_rules(
            config.funnel.symptom_taxonomy.clone(),
        )),
        url if url.starts_with("http://") || url.starts_with("https://") => {
            Box::new(RemoteBackend::new(url))
        }
        other => {
            return Err(CmdError::Data(format!(
                "unknown backend {other:?} (expected \"rule\" or an http(s) URL)"
            )));
        }
    };
    let targets: Option<Vec<NodeId>> = match &args.incident {
        Some(raw) => Some(vec![NodeId::new(raw).map_err(data_err)?]),
        None => None,
    };
    let outcome = analyze_graph(&graph, config, backend.as_ref(), targets.as_deref(), jobs)
        .map_err(|e| match e {
            FunnelError::BackendUnavailable { message, .. } => CmdError::Backend(message),
            other => CmdError::Data(other.to_string()),
        })?;
    write_out(args.out.as_deref(), &outcome.report.to_jsonl())?;
    if !outcome.backend_failures.is_empty() {
        for (incident, message) in &outcome.backend_failures {
            eprintln!("backend failure on {incident}: {message}");
        }
        return Err(CmdError::Backend(format!(
            "backend unavailable for {} of {} incidents; partial chains saved",
            outcome.backend_failures.len(),
            outcome.report.incidents.len()
        )));
    }
    Ok(())
}

fn cmd_classify(args: &ClassifyArgs, config: &Config) -> Result<(), CmdError> {
    let report = load_analysis(&args.analysis)?;
    let reclassified = reclassify(&report, &config.classify_keywords);
    write_out(args.out.as_deref(), &reclassified.to_jsonl())
}

fn cmd_scan(args: &ScanArgs, jobs: usize) -> Result<(), CmdError> {
    let raw = std::fs::read_to_string(&args.rules)
        .map_err(|e| CmdError::Data(format!("cannot read {}: {e}", args.rules.display())))?;
    let rules = scan::load_rules(&raw).map_err(data_err)?;
    let (matches, summary) = scan::scan_corpus(&args.corpus, &rules, jobs).map_err(data_err)?;
    write_out(args.out.as_deref(), &render_scan(&matches, &summary))
}

/// Matches first, one per line, then the summary: the same line-delimited
/// discipline as the analysis format.
fn render_scan(matches: &[ScanMatch], summary: &ScanSummary) -> String {
    let mut out = String::new();
    for m in matches {
        out.push_str(&serde_json::to_string(m).expect("match serializes"));
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(summary).expect("summary serializes"));
    out.push('\n');
    out
}

fn cmd_report(args: &ReportArgs) -> Result<(), CmdError> {
    let report = load_analysis(&args.analysis)?;
    report.verify_consistency().map_err(CmdError::Data)?;
    let rendered = match args.format.as_str() {
        "structured" => report.to_jsonl(),
        _ => report.render_text(),
    };
    print!("{rendered}");
    Ok(())
}

fn cmd_gen_fixture(args: &GenFixtureArgs) -> Result<(), CmdError> {
    let profile: FixtureProfile = args.profile.parse().map_err(CmdError::Data)?;
    let manifest = fixture::generate(profile, args.seed, &args.out_dir).map_err(data_err)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&manifest).expect("manifest serializes")
    );
    Ok(())
}
