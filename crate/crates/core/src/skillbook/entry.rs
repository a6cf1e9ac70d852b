use serde::{Deserialize, Serialize};

use crate::dsl::Template;
use crate::embedding::EmbeddingKey;

pub type EntryId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Guidance { text: String },
    GlobalGuidance { text: String },
    Template { template: Template },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Guidance,
    GlobalGuidance,
    Template,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::Guidance => "guidance",
            PayloadKind::GlobalGuidance => "global_guidance",
            PayloadKind::Template => "template",
        }
    }
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Guidance { .. } => PayloadKind::Guidance,
            Payload::GlobalGuidance { .. } => PayloadKind::GlobalGuidance,
            Payload::Template { .. } => PayloadKind::Template,
        }
    }

    /// Guidance text, or `None` for templates.
    pub fn text(&self) -> Option<&str> {
        match self {
            Payload::Guidance { text } | Payload::GlobalGuidance { text } => Some(text),
            Payload::Template { .. } => None,
        }
    }

    pub fn template(&self) -> Option<&Template> {
        match self {
            Payload::Template { template } => Some(template),
            _ => None,
        }
    }

    /// Text shown to the policy: guidance text or rendered template source.
    pub fn display_text(&self) -> String {
        match self {
            Payload::Guidance { text } | Payload::GlobalGuidance { text } => text.clone(),
            Payload::Template { template } => template.render_source(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    Success,
    Clustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub task_name: String,
    pub source: Source,
    pub iteration: u64,
    /// Set when the paraphrase or compression fell back to the raw input.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_program: Option<String>,
    /// Free-form audit note (e.g. the compression rationale).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Provenance {
    pub fn new(task_name: impl Into<String>, source: Source, iteration: u64) -> Self {
        Provenance { task_name: task_name.into(), source, iteration, fallback: false, failed_program: None, note: None }
    }
}

/// An entry before the book assigns its id and timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEntry {
    /// Explicit id; `None` takes the next free id.
    pub id: Option<EntryId>,
    pub key: EmbeddingKey,
    pub payload: Payload,
    pub provenance: Provenance,
}

impl NewEntry {
    pub fn new(key: EmbeddingKey, payload: Payload, provenance: Provenance) -> Self {
        NewEntry { id: None, key, payload, provenance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillbookEntry {
    pub id: EntryId,
    pub key: EmbeddingKey,
    pub payload: Payload,
    pub provenance: Provenance,
    /// Logical timestamp: the generation that inserted the entry.
    pub created_at: u64,
    pub active: bool,
    pub deactivated_at: Option<u64>,
}

impl SkillbookEntry {
    pub fn kind(&self) -> PayloadKind {
        self.payload.kind()
    }

    pub fn is_global(&self) -> bool {
        self.key.is_global
    }
}
