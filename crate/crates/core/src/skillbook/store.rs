//! Append-only JSON-Lines storage.
//!
//! Line 1 is the header; each later line is an `entry` or `tombstone`
//! record stamped with the generation that published it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::entry::{EntryId, Payload, Provenance, SkillbookEntry};
use super::SkillbookError;
use crate::embedding::{EmbeddingKey, Vector};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub embedding_dimension: usize,
    pub embedder_id: String,
}

impl Header {
    pub fn new(embedder_id: impl Into<String>, embedding_dimension: usize) -> Self {
        Header { schema_version: SCHEMA_VERSION, embedding_dimension, embedder_id: embedder_id.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub(super) enum Record {
    Entry {
        generation: u64,
        id: EntryId,
        action_text: String,
        object_texts: Vec<String>,
        is_global: bool,
        v_act: Vector,
        v_obj: Vector,
        v_scene: Option<Vector>,
        payload: Payload,
        provenance: Provenance,
        created_at: u64,
    },
    Tombstone {
        generation: u64,
        id: EntryId,
    },
}

impl Record {
    pub(super) fn entry(e: &SkillbookEntry) -> Record {
        Record::Entry {
            generation: e.created_at,
            id: e.id,
            action_text: e.key.action_text.clone(),
            object_texts: e.key.object_texts.clone(),
            is_global: e.key.is_global,
            v_act: e.key.v_act.clone(),
            v_obj: e.key.v_obj.clone(),
            v_scene: e.key.v_scene.clone(),
            payload: e.payload.clone(),
            provenance: e.provenance.clone(),
            created_at: e.created_at,
        }
    }

    pub(super) fn generation(&self) -> u64 {
        match self {
            Record::Entry { generation, .. } | Record::Tombstone { generation, .. } => *generation,
        }
    }

    pub(super) fn into_entry(self) -> Option<SkillbookEntry> {
        match self {
            Record::Entry {
                id,
                action_text,
                object_texts,
                is_global,
                v_act,
                v_obj,
                v_scene,
                payload,
                provenance,
                created_at,
                ..
            } => Some(SkillbookEntry {
                id,
                key: EmbeddingKey { action_text, object_texts, is_global, v_act, v_obj, v_scene },
                payload,
                provenance,
                created_at,
                active: true,
                deactivated_at: None,
            }),
            Record::Tombstone { .. } => None,
        }
    }
}

pub(super) fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("skillbook records serialize")
}

/// Parsed file contents. `header` is `None` for an empty file.
pub(super) struct Loaded {
    pub header: Option<Header>,
    pub records: Vec<Record>,
}

pub(super) fn read(path: &Path) -> Result<Loaded, SkillbookError> {
    let file = File::open(path).map_err(|e| SkillbookError::Io(format!("{}: {e}", path.display())))?;
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| SkillbookError::Corrupt { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: Header = serde_json::from_str(&line)
                .map_err(|e| SkillbookError::Corrupt { line: line_no, message: format!("bad header: {e}") })?;
            header = Some(h);
            continue;
        }
        let r: Record = serde_json::from_str(&line)
            .map_err(|e| SkillbookError::Corrupt { line: line_no, message: e.to_string() })?;
        records.push(r);
    }
    Ok(Loaded { header, records })
}

/// Append handle for a store file.
pub(super) struct Appender {
    file: File,
}

impl Appender {
    pub(super) fn open(path: &Path, header: &Header, write_header: bool) -> Result<Self, SkillbookError> {
        let io = |e: std::io::Error| SkillbookError::Io(format!("{}: {e}", path.display()));
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if write_header {
            writeln!(file, "{}", to_line(header)).map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        Ok(Appender { file })
    }

    pub(super) fn append(&mut self, lines: &[String]) -> Result<(), SkillbookError> {
        let io = |e: std::io::Error| SkillbookError::Io(e.to_string());
        let mut buf = String::new();
        for l in lines {
            buf.push_str(l);
            buf.push('\n');
        }
        self.file.write_all(buf.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

/// Writes a complete file atomically (temp file + rename).
pub(super) fn write_all(path: &Path, header: &Header, records: &[Record]) -> Result<(), SkillbookError> {
    let io = |e: std::io::Error| SkillbookError::Io(format!("{}: {e}", path.display()));
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        writeln!(w, "{}", to_line(header)).map_err(io)?;
        for r in records {
            writeln!(w, "{}", to_line(r)).map_err(io)?;
        }
        w.flush().map_err(io)?;
        w.get_ref().sync_data().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}
