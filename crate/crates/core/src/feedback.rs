//! Turns raw human corrections into skillbook entries.
//!
//! A correction is paraphrased into a local instruction keyed by the
//! current subtask and scene, plus optionally a task-invariant instruction
//! stored under the global key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::SkillProgram;
use crate::embedding::{embed_key, EmbedError, Embedder, EmbeddingKey};
use crate::model::{LanguageModel, Message, ModelRequest, Role};
use crate::prompts::{fill, json_body, Prompts};
use crate::scene::SceneGraph;
use crate::simenv::TaskSpec;
use crate::skillbook::{Batch, EntryId, NewEntry, Payload, Provenance, Skillbook, SkillbookError, Source};

/// Response budget for paraphrase requests, in characters.
pub const PARAPHRASE_BUDGET: usize = 600;

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("feedback text is empty")]
    Empty,
    #[error("feedback context has no action label")]
    MissingAction,
    #[error("general guidance names scene object `{0}`")]
    NotTaskInvariant(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Skillbook(#[from] SkillbookError),
}

/// Where a correction was given.
#[derive(Debug, Clone)]
pub struct FeedbackContext {
    pub task_name: String,
    pub action_label: String,
    pub object_labels: Vec<String>,
    pub scene: SceneGraph,
    pub failed_program: Option<SkillProgram>,
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedFeedback {
    pub local_text: String,
    pub general_text: Option<String>,
    pub raw_text: String,
    /// The model failed twice (or was unavailable) and `local_text` is the
    /// raw text verbatim.
    pub fallback: bool,
}

#[derive(Deserialize)]
struct Reply {
    local_text: String,
    #[serde(default)]
    general_text: Option<String>,
}

/// First scene label mentioned in `text` as a whole word sequence,
/// case-insensitively.
pub fn mentioned_label<'a>(text: &str, labels: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    let words = tokens(text);
    labels.into_iter().find(|l| {
        let lw = tokens(l);
        !lw.is_empty() && words.windows(lw.len()).any(|w| w == lw.as_slice())
    })
}

fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

fn check_reply(text: &str, ctx: &FeedbackContext) -> Result<(String, Option<String>), String> {
    let body = json_body(text).ok_or("no JSON object in the reply")?;
    let r: Reply = serde_json::from_str(body).map_err(|e| format!("malformed JSON: {e}"))?;
    let local = r.local_text.trim().to_string();
    if local.is_empty() {
        return Err("local_text is empty".into());
    }
    let general = r.general_text.map(|g| g.trim().to_string()).filter(|g| !g.is_empty());
    if let Some(g) = &general {
        if let Some(l) = mentioned_label(g, ctx.scene.labels()) {
            return Err(format!("general_text names the scene object \"{l}\""));
        }
    }
    Ok((local, general))
}

/// Paraphrases a correction. One retry on an invalid reply; after a second
/// invalid reply or any model error the raw text is kept verbatim.
pub fn parse_feedback(
    raw: &str,
    ctx: &FeedbackContext,
    model: &dyn LanguageModel,
    prompts: &Prompts,
) -> Result<ParsedFeedback, FeedbackError> {
    let raw_text = raw.trim();
    if raw_text.is_empty() {
        return Err(FeedbackError::Empty);
    }
    if ctx.action_label.trim().is_empty() {
        return Err(FeedbackError::MissingAction);
    }
    let labels: Vec<&str> = ctx.scene.labels().collect();
    let program = ctx.failed_program.as_ref().map_or_else(|| "(none)".to_string(), SkillProgram::render);
    let objects = ctx.object_labels.join(", ");
    let first = fill(
        &prompts.paraphrase,
        &[
            ("task", &ctx.task_name),
            ("action", &ctx.action_label),
            ("objects", &objects),
            ("labels", &labels.join(", ")),
            ("program", &program),
            ("feedback", raw_text),
        ],
    );
    let mut messages = vec![Message::user(first)];
    for attempt in 0..2 {
        let req = ModelRequest::new(Role::Paraphrase, messages.clone(), PARAPHRASE_BUDGET);
        let reply = match model.complete(&req) {
            Ok(r) => r.text,
            Err(e) => {
                tracing::warn!(error = %e, "paraphrase unavailable, keeping feedback verbatim");
                break;
            }
        };
        match check_reply(&reply, ctx) {
            Ok((local_text, general_text)) => {
                return Ok(ParsedFeedback { local_text, general_text, raw_text: raw_text.to_string(), fallback: false })
            }
            Err(why) if attempt == 0 => {
                tracing::debug!(%why, "paraphrase rejected, retrying");
                messages.push(Message::assistant(reply));
                messages
                    .push(Message::user(fill(&prompts.paraphrase_retry, &[("errors", &why), ("feedback", raw_text)])));
            }
            Err(why) => {
                tracing::warn!(%why, "paraphrase rejected twice, keeping feedback verbatim")
            }
        }
    }
    Ok(ParsedFeedback {
        local_text: raw_text.to_string(),
        general_text: None,
        raw_text: raw_text.to_string(),
        fallback: true,
    })
}

/// Entries that `ingest` would add, without touching the book.
fn entries_for(
    parsed: &ParsedFeedback,
    ctx: &FeedbackContext,
    embedder: &dyn Embedder,
) -> Result<Vec<NewEntry>, FeedbackError> {
    if parsed.local_text.trim().is_empty() {
        return Err(FeedbackError::Empty);
    }
    if ctx.action_label.trim().is_empty() {
        return Err(FeedbackError::MissingAction);
    }
    let mut provenance = Provenance::new(&ctx.task_name, Source::Human, ctx.iteration);
    provenance.fallback = parsed.fallback;
    provenance.failed_program = ctx.failed_program.as_ref().map(SkillProgram::render);
    let key = embed_key(embedder, &ctx.action_label, &ctx.object_labels, Some(&ctx.scene))?;
    let mut out = vec![NewEntry::new(key, Payload::Guidance { text: parsed.local_text.clone() }, provenance.clone())];
    if let Some(g) = &parsed.general_text {
        if let Some(l) = mentioned_label(g, ctx.scene.labels()) {
            return Err(FeedbackError::NotTaskInvariant(l.to_string()));
        }
        provenance.failed_program = None;
        out.push(NewEntry::new(
            EmbeddingKey::global(embedder.dimension()),
            Payload::GlobalGuidance { text: g.clone() },
            provenance,
        ));
    }
    Ok(out)
}

/// Stores a parsed correction as one guidance entry plus, when present, one
/// global entry, published together. Exact duplicates of active entries
/// are skipped. Returns the new ids.
pub fn ingest(
    parsed: &ParsedFeedback,
    ctx: &FeedbackContext,
    book: &Skillbook,
    embedder: &dyn Embedder,
) -> Result<Vec<EntryId>, FeedbackError> {
    let candidates = entries_for(parsed, ctx, embedder)?;
    let snap = book.snapshot();
    let mut batch = Batch::new();
    for e in candidates {
        if snap.find_duplicate(&e.key, &e.payload).is_none() {
            batch.insert(e);
        }
    }
    Ok(book.commit(batch)?.inserted)
}

/// One line of a feedback corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub raw_text: String,
    pub task_name: String,
    pub action_label: String,
    #[serde(default)]
    pub object_labels: Vec<String>,
    /// A task file (its initial scene is used) or a scene graph JSON file,
    /// relative to the corpus file.
    pub scene_file: String,
    #[serde(default)]
    pub iteration: u64,
}

/// Totals of a corpus ingestion. Every non-blank line is counted once in
/// exactly one of `entries_added`, `skipped` and `errors`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    /// Records that added at least one entry.
    pub entries_added: usize,
    /// Global entries among the added ones.
    pub globals_added: usize,
    /// Records whose entries all duplicated active entries.
    pub skipped: usize,
    pub errors: usize,
    /// Records kept verbatim because the paraphrase failed.
    pub fallbacks: usize,
    /// `line N: reason` for every error.
    pub problems: Vec<String>,
}

/// Ingests a JSON-lines corpus in file order. Malformed records are counted
/// and logged, never fatal. Fails only if the corpus itself is unreadable.
pub fn ingest_corpus(
    path: &Path,
    book: &Skillbook,
    model: &dyn LanguageModel,
    embedder: &dyn Embedder,
    prompts: &Prompts,
) -> std::io::Result<IngestReport> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut scenes: BTreeMap<PathBuf, Result<SceneGraph, String>> = BTreeMap::new();
    let mut report = IngestReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let lineno = i + 1;
        let outcome = (|| -> Result<(Vec<EntryId>, bool), String> {
            let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
            let scene_path = base.join(&rec.scene_file);
            let scene = scenes.entry(scene_path.clone()).or_insert_with(|| load_scene(&scene_path)).clone()?;
            let ctx = FeedbackContext {
                task_name: rec.task_name,
                action_label: rec.action_label,
                object_labels: rec.object_labels,
                scene,
                failed_program: None,
                iteration: rec.iteration,
            };
            let parsed = parse_feedback(&rec.raw_text, &ctx, model, prompts).map_err(|e| e.to_string())?;
            let ids = ingest(&parsed, &ctx, book, embedder).map_err(|e| e.to_string())?;
            Ok((ids, parsed.fallback))
        })();
        match outcome {
            Ok((ids, fallback)) => {
                report.fallbacks += usize::from(fallback);
                if ids.is_empty() {
                    report.skipped += 1;
                } else {
                    report.entries_added += 1;
                    let snap = book.snapshot();
                    report.globals_added +=
                        ids.iter().filter(|id| snap.get(**id).is_some_and(|e| e.is_global())).count();
                }
            }
            Err(why) => {
                tracing::warn!(line = lineno, %why, "corpus record rejected");
                report.errors += 1;
                report.problems.push(format!("line {lineno}: {why}"));
            }
        }
    }
    Ok(report)
}

/// A scene from a task file (initial world) or a scene graph JSON file.
pub fn load_scene(path: &Path) -> Result<SceneGraph, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if path.extension().is_some_and(|x| x == "toml") {
        let spec = TaskSpec::from_toml(&text).map_err(|e| e.to_string())?;
        Ok(spec.world.scene_graph())
    } else {
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
