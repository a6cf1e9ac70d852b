//! Offline refinement of the skillbook: group related guidance, ask the
//! model to condense each group under the successful templates near it,
//! and publish the result as a single generation.
//!
//! Compression never grows a group: a reply with more entries or more
//! characters than the members is retried once with an explicit budget,
//! then replaced by the members themselves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::Template;
use crate::embedding::EmbeddingKey;
use crate::model::{LanguageModel, Message, ModelRequest, Role};
use crate::prompts::{fill, json_body, Prompts};
use crate::skillbook::{
    key_score, Batch, BookState, EntryId, NewEntry, Payload, PayloadKind, Provenance, RetrievalParams, Skillbook,
    SkillbookError, Source, Stats,
};

/// Default membership threshold.
pub const DEFAULT_THETA_C: f64 = 0.80;
/// Response budget for compression requests, in characters.
pub const COMPRESS_BUDGET: usize = 4000;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("a clustering job is already running on this skillbook")]
    Busy,
    #[error(transparent)]
    Skillbook(#[from] SkillbookError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// The seed's key; every member scores at least the threshold against it.
    pub centroid_key: EmbeddingKey,
    /// Seed first, then ascending id order of the rest.
    pub member_ids: Vec<EntryId>,
    pub members: Vec<String>,
    /// Task of the seed entry.
    pub task_name: String,
    pub conditioning_templates: Vec<(EntryId, Template)>,
    /// Members all came from an earlier clustering run.
    pub already_compressed: bool,
}

impl Cluster {
    pub fn is_global(&self) -> bool {
        self.centroid_key.is_global
    }

    pub fn member_chars(&self) -> usize {
        self.members.iter().map(|m| m.chars().count()).sum()
    }
}

/// Greedy grouping over active guidance. The highest unclustered id seeds
/// a cluster that absorbs every unclustered entry scoring at least
/// `theta_c` against it; templates that clear the same bar condition it.
/// Active global entries form one extra cluster without templates.
pub fn form_clusters(snapshot: &BookState, theta_c: f64, params: &RetrievalParams) -> Vec<Cluster> {
    let mut pending: Vec<_> = snapshot.active().filter(|e| e.kind() == PayloadKind::Guidance).collect();
    pending.sort_by_key(|e| std::cmp::Reverse(e.id));
    let templates: Vec<_> = snapshot.active().filter(|e| e.kind() == PayloadKind::Template).collect();
    let mut clusters = Vec::new();
    while let Some(seed) = pending.first().copied() {
        let (mut taken, rest): (Vec<_>, Vec<_>) =
            pending.into_iter().partition(|e| e.id == seed.id || key_score(params, &seed.key, &e.key) >= theta_c);
        pending = rest;
        taken.sort_by_key(|e| (e.id != seed.id, e.id));
        let conditioning_templates = templates
            .iter()
            .filter(|t| key_score(params, &seed.key, &t.key) >= theta_c)
            .filter_map(|t| t.payload.template().map(|tpl| (t.id, tpl.clone())))
            .collect();
        clusters.push(Cluster {
            centroid_key: seed.key.clone(),
            member_ids: taken.iter().map(|e| e.id).collect(),
            members: taken.iter().map(|e| e.payload.display_text()).collect(),
            task_name: seed.provenance.task_name.clone(),
            conditioning_templates,
            already_compressed: taken.iter().all(|e| e.provenance.source == Source::Clustering),
        });
    }
    let mut globals: Vec<_> = snapshot.active().filter(|e| e.kind() == PayloadKind::GlobalGuidance).collect();
    if !globals.is_empty() {
        globals.sort_by_key(|e| e.id);
        clusters.push(Cluster {
            centroid_key: EmbeddingKey::global(snapshot.header().embedding_dimension),
            member_ids: globals.iter().map(|e| e.id).collect(),
            members: globals.iter().map(|e| e.payload.display_text()).collect(),
            task_name: globals[globals.len() - 1].provenance.task_name.clone(),
            conditioning_templates: Vec::new(),
            already_compressed: globals.iter().all(|e| e.provenance.source == Source::Clustering),
        });
    }
    clusters
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionOutcome {
    /// The model's reply was accepted.
    Compressed,
    /// Nothing to do: the members stay as they are.
    Identity,
    /// Two invalid replies or a model error; the members stay.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub new_texts: Vec<String>,
    pub pruned_ids: Vec<EntryId>,
    pub rationale: String,
    pub outcome: CompressionOutcome,
    /// Why each rejected reply was rejected, in order.
    pub violations: Vec<String>,
}

impl CompressionResult {
    fn identity(c: &Cluster, outcome: CompressionOutcome, violations: Vec<String>) -> Self {
        CompressionResult {
            new_texts: c.members.clone(),
            pruned_ids: Vec::new(),
            rationale: String::new(),
            outcome,
            violations,
        }
    }

    /// The result leaves the cluster's entries untouched.
    pub fn is_identity(&self, c: &Cluster) -> bool {
        self.outcome != CompressionOutcome::Compressed || (self.pruned_ids.is_empty() && self.new_texts == c.members)
    }
}

#[derive(Deserialize)]
struct Reply {
    entries: Vec<String>,
    #[serde(default)]
    pruned: Vec<usize>,
    #[serde(default)]
    rationale: String,
}

/// Checks a reply against the size contract; pruned indices become ids.
fn check_reply(text: &str, c: &Cluster) -> Result<CompressionResult, String> {
    let body = json_body(text).ok_or("no JSON object in the reply")?;
    let r: Reply = serde_json::from_str(body).map_err(|e| format!("malformed JSON: {e}"))?;
    let n = c.members.len();
    let mut pruned_ids = Vec::new();
    for &i in &r.pruned {
        let id = *c.member_ids.get(i).ok_or(format!("pruned index {i} is out of range"))?;
        if pruned_ids.contains(&id) {
            return Err(format!("pruned index {i} is listed twice"));
        }
        pruned_ids.push(id);
    }
    if !pruned_ids.is_empty() && c.conditioning_templates.is_empty() {
        return Err("entries can only be pruned against a template".into());
    }
    let new_texts: Vec<String> = r.entries.iter().map(|t| t.trim().to_string()).collect();
    if new_texts.iter().any(String::is_empty) {
        return Err("an entry is empty".into());
    }
    if new_texts.len() > n {
        return Err(format!("{} entries for {n} members", new_texts.len()));
    }
    let chars: usize = new_texts.iter().map(|t| t.chars().count()).sum();
    if chars > c.member_chars() {
        return Err(format!("{chars} characters for members totalling {}", c.member_chars()));
    }
    if new_texts.is_empty() && pruned_ids.len() < n {
        return Err("no entries returned for members that were not pruned".into());
    }
    Ok(CompressionResult {
        new_texts,
        pruned_ids,
        rationale: r.rationale.trim().to_string(),
        outcome: CompressionOutcome::Compressed,
        violations: Vec::new(),
    })
}

fn render_members(c: &Cluster) -> String {
    c.members.iter().enumerate().map(|(i, m)| format!("[{i}] {m}")).collect::<Vec<_>>().join("\n")
}

fn render_templates(c: &Cluster) -> String {
    if c.conditioning_templates.is_empty() {
        return "(none)".into();
    }
    c.conditioning_templates.iter().map(|(_, t)| t.render_source()).collect::<Vec<_>>().join("\n\n")
}

/// Condenses one cluster. Singletons with nothing to prune against, and
/// clusters made only of earlier compression output, are kept without
/// asking the model.
pub fn compress_cluster(c: &Cluster, model: &dyn LanguageModel, prompts: &Prompts) -> CompressionResult {
    let trivial = c.members.len() == 1 && c.conditioning_templates.is_empty();
    if c.members.is_empty() || trivial || c.already_compressed {
        return CompressionResult::identity(c, CompressionOutcome::Identity, Vec::new());
    }
    let label = c.centroid_key.label();
    let first = fill(
        &prompts.compress,
        &[("cluster", &label), ("members", &render_members(c)), ("templates", &render_templates(c))],
    );
    let mut messages = vec![Message::user(first)];
    let mut violations = Vec::new();
    for attempt in 0..2 {
        let req = ModelRequest::new(Role::Compress, messages.clone(), COMPRESS_BUDGET);
        let reply = match model.complete(&req) {
            Ok(r) => r.text,
            Err(e) => {
                violations.push(format!("model error: {e}"));
                break;
            }
        };
        match check_reply(&reply, c) {
            Ok(mut r) => {
                r.violations = violations;
                return r;
            }
            Err(why) => {
                tracing::debug!(cluster = %label, %why, "compression rejected");
                violations.push(why.clone());
                if attempt == 0 {
                    messages.push(Message::assistant(reply));
                    messages.push(Message::user(fill(
                        &prompts.compress_retry,
                        &[
                            ("errors", &why),
                            ("max_entries", &c.members.len().to_string()),
                            ("max_chars", &c.member_chars().to_string()),
                            ("cluster", &label),
                        ],
                    )));
                }
            }
        }
    }
    tracing::warn!(cluster = %label, "compression fell back to the original entries");
    CompressionResult::identity(c, CompressionOutcome::Fallback, violations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub centroid: String,
    pub member_ids: Vec<EntryId>,
    pub template_ids: Vec<EntryId>,
    pub result: CompressionResult,
    /// Ids of the entries that replace the members.
    pub inserted: Vec<EntryId>,
}

/// The cluster-report file written after each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: usize,
    pub sizes: Vec<usize>,
    pub pruned: Vec<EntryId>,
    /// Active guidance plus global characters.
    pub char_before: usize,
    pub char_after: usize,
    pub generation_before: u64,
    pub generation_after: u64,
    pub stats_before: Stats,
    pub stats_after: Stats,
    pub fallbacks: usize,
    pub details: Vec<ClusterSummary>,
}

/// Clusters and compresses the current generation, then publishes all
/// replacements and deactivations as one batch. Templates are never
/// modified. Fails with [`ClusterError::Busy`] if another run holds the
/// book's job slot.
pub fn run_offline(
    book: &Skillbook,
    model: &dyn LanguageModel,
    prompts: &Prompts,
    params: &RetrievalParams,
    theta_c: f64,
) -> Result<ClusterReport, ClusterError> {
    let _job = book.try_lock_job().ok_or(ClusterError::Busy)?;
    let snapshot = book.snapshot();
    let stats_before = snapshot.stats();
    let clusters = form_clusters(&snapshot, theta_c, params);
    let mut batch = Batch::new();
    let mut pending: Vec<usize> = Vec::new();
    let mut details = Vec::new();
    for (ci, c) in clusters.iter().enumerate() {
        let result = compress_cluster(c, model, prompts);
        if !result.is_identity(c) {
            for id in &c.member_ids {
                batch.deactivate(*id);
            }
            for text in &result.new_texts {
                let mut provenance = Provenance::new(&c.task_name, Source::Clustering, snapshot.generation());
                provenance.note = (!result.rationale.is_empty()).then(|| result.rationale.clone());
                let payload = if c.is_global() {
                    Payload::GlobalGuidance { text: text.clone() }
                } else {
                    Payload::Guidance { text: text.clone() }
                };
                batch.insert(NewEntry::new(c.centroid_key.clone(), payload, provenance));
                pending.push(ci);
            }
        }
        details.push(ClusterSummary {
            centroid: c.centroid_key.label(),
            member_ids: c.member_ids.clone(),
            template_ids: c.conditioning_templates.iter().map(|(id, _)| *id).collect(),
            result,
            inserted: Vec::new(),
        });
    }
    let commit = book.commit(batch)?;
    for (ci, id) in pending.iter().zip(&commit.inserted) {
        details[*ci].inserted.push(*id);
    }
    let stats_after = book.snapshot().stats();
    Ok(ClusterReport {
        clusters: clusters.len(),
        sizes: clusters.iter().map(|c| c.members.len()).collect(),
        pruned: details.iter().flat_map(|d| d.result.pruned_ids.iter().copied()).collect(),
        char_before: stats_before.guidance_chars + stats_before.global_chars,
        char_after: stats_after.guidance_chars + stats_after.global_chars,
        generation_before: stats_before.generation,
        generation_after: commit.generation,
        fallbacks: details.iter().filter(|d| d.result.outcome == CompressionOutcome::Fallback).count(),
        stats_before,
        stats_after,
        details,
    })
}
