//! Batch subcommands: run, ingest, cluster, inspect and eval.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use memo_core::cluster::{run_offline, ClusterError, ClusterReport};
use memo_core::config::Config;
use memo_core::embedding::embed_key;
use memo_core::feedback::{ingest_corpus, IngestReport};
use memo_core::policy::{EpisodeEvent, EpisodeResult, NoTeacher, Outcome, Teacher};
use memo_core::simenv::{Category, ScriptedTeacher, SimEnv, Split, TaskSpec, TaskSuite};
use memo_core::skillbook::{EntryId, RetrievalQuery, RetrievalResult, Skillbook, SkillbookEntry, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};

use crate::prompt_teacher::PromptTeacher;
use crate::runtime::{CommonArgs, Runtime};

/// Why a command stopped early. Usage errors exit with 2, the rest with 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Error(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Error(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Error(m) => m,
        }
    }
}

impl From<String> for Failure {
    fn from(m: String) -> Self {
        Failure::Error(m)
    }
}

fn unknown_task(name: &str, suite: &TaskSuite) -> Failure {
    let mut msg = format!("unknown task `{name}`; available tasks:");
    for n in suite.names() {
        msg.push_str("\n  ");
        msg.push_str(n);
    }
    Failure::Usage(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TeacherKind {
    /// The correction script bundled with the task.
    Scripted,
    /// Ask at the terminal after every program.
    Interactive,
    /// Never intervene.
    None,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub skillbook: PathBuf,
    /// Ablation: no skillbook reads or writes.
    #[arg(long)]
    pub no_retrieval: bool,
    #[arg(long, value_enum, default_value_t = TeacherKind::Scripted)]
    pub teacher: TeacherKind,
    #[arg(long, default_value_t = 1)]
    pub trials: u32,
    /// Episode log directory; defaults to `logs/` next to the skillbook.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

/// One trial as written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub schema_version: u32,
    pub task: String,
    pub trial: u32,
    pub model: String,
    pub prompts: Vec<String>,
    pub config: Config,
    pub result: EpisodeResult,
    pub events: Vec<EpisodeEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task: String,
    pub trials: u32,
    pub successes: u32,
    pub completed: u32,
    pub mean_feedback: f64,
    pub logs: Vec<PathBuf>,
}

impl RunSummary {
    pub fn line(&self) -> String {
        format!("{}: {}/{}, avg feedback {:.1}", self.task, self.successes, self.trials, self.mean_feedback)
    }
}

pub fn log_file_name(task: &str, trial: u32) -> String {
    let slug: String =
        task.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    format!("{slug}-{trial:03}.json")
}

/// Runs `trials` episodes against one file-backed book; corrections from
/// earlier trials are visible to later ones.
pub fn run(rt: &Runtime, args: &RunArgs) -> Result<RunSummary, Failure> {
    let spec = Arc::new(rt.suite.get(&args.task).ok_or_else(|| unknown_task(&args.task, &rt.suite))?.clone());
    let book = rt.open_book(&args.skillbook)?;
    let log_dir = args
        .log_dir
        .clone()
        .unwrap_or_else(|| args.skillbook.parent().map(Path::to_path_buf).unwrap_or_default().join("logs"));
    std::fs::create_dir_all(&log_dir).map_err(|e| format!("{}: {e}", log_dir.display()))?;
    let policy = rt.policy(!args.no_retrieval);
    let mut summary = RunSummary {
        task: spec.name.clone(),
        trials: args.trials,
        successes: 0,
        completed: 0,
        mean_feedback: 0.0,
        logs: Vec::new(),
    };
    let mut feedback_total = 0u64;
    for trial in 1..=args.trials {
        let mut env = SimEnv::new(spec.clone());
        let mut teacher: Box<dyn Teacher> = match args.teacher {
            TeacherKind::Scripted => Box::new(ScriptedTeacher::new(spec.teacher_script())),
            TeacherKind::Interactive => Box::new(PromptTeacher::new(std::io::stdin().lock(), std::io::stderr())),
            TeacherKind::None => Box::new(NoTeacher),
        };
        let mut events = Vec::new();
        let result = policy.run_episode(&mut env, &book, &mut teacher, &mut |e: &EpisodeEvent| events.push(e.clone()));
        summary.successes += u32::from(result.success());
        summary.completed += u32::from(result.outcome != Outcome::Aborted);
        feedback_total += u64::from(result.feedback_count);
        let log = EpisodeLog {
            schema_version: SCHEMA_VERSION,
            task: spec.name.clone(),
            trial,
            model: rt.model.backend_id(),
            prompts: rt.prompts.versions(),
            config: rt.config,
            result,
            events,
        };
        let path = log_dir.join(log_file_name(&spec.name, trial));
        write_json(&path, &log)?;
        summary.logs.push(path);
    }
    if args.trials > 0 {
        summary.mean_feedback = feedback_total as f64 / f64::from(args.trials);
    }
    rt.finish()?;
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// JSON-lines feedback corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub skillbook: PathBuf,
}

pub fn ingest(rt: &Runtime, args: &IngestArgs) -> Result<IngestReport, Failure> {
    let book = rt.open_book(&args.skillbook)?;
    let report = ingest_corpus(&args.corpus, &book, &*rt.model, &rt.embedder, &rt.prompts)
        .map_err(|e| format!("{}: {e}", args.corpus.display()))?;
    rt.finish()?;
    Ok(report)
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub skillbook: PathBuf,
    /// Report file; defaults to `<skillbook>.cluster-report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn cluster_report_path(args: &ClusterArgs) -> PathBuf {
    args.report.clone().unwrap_or_else(|| {
        let mut name = args.skillbook.file_name().unwrap_or_default().to_os_string();
        name.push(".cluster-report.json");
        args.skillbook.with_file_name(name)
    })
}

pub fn cluster(rt: &Runtime, args: &ClusterArgs) -> Result<(ClusterReport, PathBuf), Failure> {
    let book = rt.open_book(&args.skillbook)?;
    let report =
        run_offline(&book, &*rt.model, &rt.prompts, &rt.config.retrieval, rt.config.theta_c).map_err(|e| match e {
            ClusterError::Busy => "another clustering job holds the skillbook".to_string(),
            e => e.to_string(),
        })?;
    let path = cluster_report_path(args);
    write_json(&path, &report)?;
    rt.finish()?;
    Ok((report, path))
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub skillbook: PathBuf,
    /// Dry-run retrieval for `"<action>|<object>, <object>"`.
    #[arg(long)]
    pub query: Option<String>,
    /// Machine-readable output.
    #[arg(long)]
    pub json: bool,
}

/// Splits `"open|cabinet handle, cabinet door"` into its labels.
pub fn parse_query(text: &str) -> Result<(String, Vec<String>), String> {
    let (action, objects) = text.split_once('|').unwrap_or((text, ""));
    let action = action.trim();
    if action.is_empty() {
        return Err(format!("query `{text}` has no action; expected \"<action>|<objects>\""));
    }
    let objects = objects.split(',').map(str::trim).filter(|o| !o.is_empty()).map(String::from).collect();
    Ok((action.to_string(), objects))
}

/// A scene-free retrieval query from `"<action>|<objects>"`.
pub fn build_query(rt: &Runtime, text: &str) -> Result<RetrievalQuery, String> {
    let (action, objects) = parse_query(text)?;
    let key = embed_key(&rt.embedder, &action, &objects, None).map_err(|e| e.to_string())?;
    Ok(RetrievalQuery::from_key(&key))
}

pub fn query_book(rt: &Runtime, book: &Skillbook, text: &str) -> Result<RetrievalResult, String> {
    book.retrieve(&build_query(rt, text)?, &rt.config.retrieval).map_err(|e| e.to_string())
}

/// Flat view of an entry for listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryView {
    pub id: EntryId,
    pub kind: String,
    pub active: bool,
    pub task: String,
    pub source: String,
    pub label: String,
    pub text: String,
    pub created_at: u64,
    pub deactivated_at: Option<u64>,
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl EntryView {
    pub fn new(e: &SkillbookEntry, score: Option<f64>) -> Self {
        let source = serde_json::to_value(e.provenance.source).ok().and_then(|v| v.as_str().map(String::from));
        EntryView {
            id: e.id,
            kind: e.kind().name().to_string(),
            active: e.active,
            task: e.provenance.task_name.clone(),
            source: source.unwrap_or_default(),
            label: e.key.label(),
            text: e.payload.display_text(),
            created_at: e.created_at,
            deactivated_at: e.deactivated_at,
            fallback: e.provenance.fallback,
            score,
        }
    }
}

pub fn inspect(rt: &Runtime, args: &InspectArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let book =
        Skillbook::load(&args.skillbook, &rt.header()).map_err(|e| format!("{}: {e}", args.skillbook.display()))?;
    let snap = book.snapshot();
    let io = |e: std::io::Error| Failure::Error(e.to_string());
    let Some(q) = &args.query else {
        let stats = snap.stats();
        if args.json {
            let v = serde_json::json!({"schema_version": SCHEMA_VERSION, "stats": stats, "header": snap.header()});
            writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json")).map_err(io)?;
        } else {
            writeln!(out, "generation {}", stats.generation).map_err(io)?;
            let rows = [
                ("guidance", stats.guidance_active, stats.guidance_inactive),
                ("global_guidance", stats.global_active, stats.global_inactive),
                ("template", stats.template_active, stats.template_inactive),
            ];
            for (kind, a, i) in rows {
                writeln!(out, "{kind:<16} {a:>6} active {i:>6} inactive").map_err(io)?;
            }
            writeln!(out, "guidance chars {}, global chars {}", stats.guidance_chars, stats.global_chars)
                .map_err(io)?;
        }
        return Ok(());
    };
    let r = query_book(rt, &book, q).map_err(Failure::Usage)?;
    let ranked: Vec<EntryView> =
        r.ranked.iter().filter_map(|s| snap.get(s.id).map(|e| EntryView::new(e, Some(s.score)))).collect();
    let globals: Vec<EntryView> =
        r.globals.iter().filter_map(|id| snap.get(*id).map(|e| EntryView::new(e, None))).collect();
    if args.json {
        let v = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "generation": r.generation,
            "ranked": ranked,
            "globals": globals,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json")).map_err(io)?;
        return Ok(());
    }
    writeln!(out, "generation {}, {} ranked, {} global", r.generation, ranked.len(), globals.len()).map_err(io)?;
    for v in &ranked {
        let score = v.score.unwrap_or_default();
        writeln!(out, "{:>6}  {score:.6}  {:<15}  {}  {}", v.id, v.kind, v.label, one_line(&v.text)).map_err(io)?;
    }
    for v in &globals {
        writeln!(out, "{:>6}  {:>8}  {:<15}  {}", v.id, "-", v.kind, one_line(&v.text)).map_err(io)?;
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    HeldOut,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Task directory to evaluate.
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub trials: u32,
    /// Book to evaluate against; never modified. Empty when absent.
    #[arg(long)]
    pub skillbook: Option<PathBuf>,
    #[arg(long)]
    pub no_retrieval: bool,
    #[arg(long, value_enum, default_value_t = SplitArg::HeldOut)]
    pub split: SplitArg,
    /// Also write the table as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: String,
    pub category: Category,
    pub successes: u32,
    pub trials: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub retrieval: bool,
    pub rows: Vec<EvalRow>,
    pub successes: u32,
    pub trials: u32,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.task.len()).max().unwrap_or(4).max(5);
        let mut s = format!("{:<width$}  {:<8}  {}\n", "task", "category", "success");
        for r in &self.rows {
            let cat = serde_json::to_value(r.category).ok().and_then(|v| v.as_str().map(String::from));
            s.push_str(&format!("{:<width$}  {:<8}  {}/{}\n", r.task, cat.unwrap_or_default(), r.successes, r.trials));
        }
        s.push_str(&format!("{:<width$}  {:<8}  {}/{}\n", "total", "", self.successes, self.trials));
        s
    }
}

/// Zero-shot evaluation: no teacher, and every trial runs on a fresh fork
/// of the book so trials cannot learn from each other.
pub fn eval(args: &EvalArgs, common: &CommonArgs) -> Result<EvalReport, Failure> {
    let config = match &common.config {
        Some(p) => Config::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => Config::default(),
    };
    let suite = TaskSuite::load_dir(&args.suite).map_err(|e| e.to_string())?;
    let rt = Runtime::with_suite(common, suite, config)?;
    let base = match &args.skillbook {
        Some(p) => Skillbook::load(p, &rt.header()).map_err(|e| format!("{}: {e}", p.display()))?,
        None => Skillbook::in_memory(rt.header()),
    };
    let tasks: Vec<&TaskSpec> = match args.split {
        SplitArg::Train => rt.suite.split(Split::Train).collect(),
        SplitArg::HeldOut => rt.suite.split(Split::HeldOut).collect(),
        SplitArg::All => rt.suite.iter().collect(),
    };
    let policy = rt.policy(!args.no_retrieval);
    let mut report = EvalReport {
        schema_version: SCHEMA_VERSION,
        retrieval: !args.no_retrieval,
        rows: Vec::new(),
        successes: 0,
        trials: 0,
    };
    for spec in tasks {
        let spec = Arc::new(spec.clone());
        let mut row = EvalRow { task: spec.name.clone(), category: spec.category, successes: 0, trials: args.trials };
        for _ in 0..args.trials {
            let book = base.fork();
            let mut env = SimEnv::new(spec.clone());
            let r = policy.run_episode(&mut env, &book, &mut NoTeacher, &mut memo_core::policy::NullObserver);
            row.successes += u32::from(r.success());
        }
        report.successes += row.successes;
        report.trials += row.trials;
        report.rows.push(row);
    }
    if let Some(p) = &args.report {
        write_json(p, &report)?;
    }
    rt.finish()?;
    Ok(report)
}
