//! The skillbook: a versioned vector store of guidance, global guidance and
//! template entries.
//!
//! Readers take [`Snapshot`]s (immutable `Arc` views of one generation).
//! Writers go through [`Skillbook::commit`], which appends the batch to the
//! store file and then swaps in the next generation in one step, so a
//! reader sees either all of a batch or none of it.

mod entry;
mod retrieve;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use entry::{EntryId, NewEntry, Payload, PayloadKind, Provenance, SkillbookEntry, Source};
pub use retrieve::{key_score, score, RetrievalParams, RetrievalQuery, RetrievalResult, Scored};
pub use store::{Header, SCHEMA_VERSION};

use store::{Appender, Record};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkillbookError {
    #[error("key dimension {found} does not match skillbook dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("entry id {0} already exists")]
    DuplicateId(EntryId),
    #[error("unknown entry id {0}")]
    UnknownId(EntryId),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("corrupt record at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("header mismatch: file has {found}, expected {expected}")]
    HeaderMismatch { expected: String, found: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Entry counts by payload kind and activity, plus active guidance size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub generation: u64,
    pub guidance_active: usize,
    pub guidance_inactive: usize,
    pub global_active: usize,
    pub global_inactive: usize,
    pub template_active: usize,
    pub template_inactive: usize,
    /// Characters of active non-global guidance text.
    pub guidance_chars: usize,
    /// Characters of active global guidance text.
    pub global_chars: usize,
}

impl Stats {
    pub fn active(&self) -> usize {
        self.guidance_active + self.global_active + self.template_active
    }

    pub fn total(&self) -> usize {
        self.active() + self.guidance_inactive + self.global_inactive + self.template_inactive
    }
}

/// One immutable generation of the book.
#[derive(Debug, Clone)]
pub struct BookState {
    header: Header,
    generation: u64,
    next_id: EntryId,
    entries: BTreeMap<EntryId, Arc<SkillbookEntry>>,
}

pub type Snapshot = Arc<BookState>;

impl BookState {
    fn empty(header: Header) -> Self {
        BookState { header, generation: 0, next_id: 1, entries: BTreeMap::new() }
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: EntryId) -> Option<&SkillbookEntry> {
        self.entries.get(&id).map(|e| e.as_ref())
    }

    /// All entries in ascending id order, active or not.
    pub fn entries(&self) -> impl Iterator<Item = &SkillbookEntry> {
        self.entries.values().map(|e| e.as_ref())
    }

    pub fn active(&self) -> impl Iterator<Item = &SkillbookEntry> {
        self.entries().filter(|e| e.active)
    }

    /// Active entry with an identical key and payload, if any.
    pub fn find_duplicate(&self, key: &crate::embedding::EmbeddingKey, payload: &Payload) -> Option<EntryId> {
        self.active().find(|e| &e.key == key && &e.payload == payload).map(|e| e.id)
    }

    pub fn stats(&self) -> Stats {
        let mut s = Stats { generation: self.generation, ..Stats::default() };
        for e in self.entries() {
            let chars = e.payload.text().map_or(0, |t| t.chars().count());
            match (e.kind(), e.active) {
                (PayloadKind::Guidance, true) => {
                    s.guidance_active += 1;
                    s.guidance_chars += chars;
                }
                (PayloadKind::Guidance, false) => s.guidance_inactive += 1,
                (PayloadKind::GlobalGuidance, true) => {
                    s.global_active += 1;
                    s.global_chars += chars;
                }
                (PayloadKind::GlobalGuidance, false) => s.global_inactive += 1,
                (PayloadKind::Template, true) => s.template_active += 1,
                (PayloadKind::Template, false) => s.template_inactive += 1,
            }
        }
        s
    }

    /// Exact brute-force retrieval over active entries.
    pub fn retrieve(
        &self,
        query: &RetrievalQuery,
        params: &RetrievalParams,
    ) -> Result<RetrievalResult, SkillbookError> {
        params.validate()?;
        let d = self.header.embedding_dimension;
        let dims_ok = query.q_act.dimension() == d
            && query.q_obj.dimension() == d
            && query.q_scene.as_ref().is_none_or(|v| v.dimension() == d);
        if !dims_ok {
            return Err(SkillbookError::DimensionMismatch { expected: d, found: query.dimension() });
        }
        let mut scored = Vec::new();
        let mut globals = Vec::new();
        for e in self.active() {
            if e.key.is_global {
                globals.push((e.created_at, e.id));
                continue;
            }
            let s = score(params, query, &e.key);
            if s >= params.theta_min {
                scored.push(Scored { id: e.id, score: s });
            }
        }
        globals.sort_by(|a, b| b.cmp(a));
        globals.truncate(params.max_globals);
        Ok(RetrievalResult {
            ranked: retrieve::rank(scored, params.k),
            globals: globals.into_iter().map(|(_, id)| id).collect(),
            generation: self.generation,
        })
    }

    fn validate_new(&self, e: &NewEntry) -> Result<(), SkillbookError> {
        let d = self.header.embedding_dimension;
        if !e.key.dimensions_consistent(d) {
            return Err(SkillbookError::DimensionMismatch { expected: d, found: e.key.dimension() });
        }
        let invalid = |m: &str| Err(SkillbookError::InvalidEntry(m.to_string()));
        match &e.payload {
            Payload::Guidance { text } | Payload::GlobalGuidance { text } if text.trim().is_empty() => {
                return invalid("payload text is empty")
            }
            Payload::Template { template } => {
                if e.key.is_global {
                    return invalid("template entries cannot use the global key");
                }
                template.check().map_err(SkillbookError::InvalidEntry)?;
            }
            _ => {}
        }
        if (e.payload.kind() == PayloadKind::GlobalGuidance) != e.key.is_global {
            return invalid("global guidance must use the global key and only it");
        }
        if !e.key.is_global && e.key.action_text.trim().is_empty() {
            return invalid("non-global key needs an action");
        }
        Ok(())
    }

    /// Records in publication order; `load(persist(S))` replays them.
    fn records(&self) -> Vec<Record> {
        let mut events: Vec<(u64, u8, EntryId, Record)> = Vec::new();
        for e in self.entries() {
            events.push((e.created_at, 0, e.id, Record::entry(e)));
            if let Some(g) = e.deactivated_at {
                events.push((g, 1, e.id, Record::Tombstone { generation: g, id: e.id }));
            }
        }
        events.sort_by_key(|e| (e.0, e.1, e.2));
        events.into_iter().map(|(_, _, _, r)| r).collect()
    }

    fn from_records(header: Header, records: Vec<Record>) -> Result<Self, SkillbookError> {
        let mut state = BookState::empty(header);
        for (i, r) in records.into_iter().enumerate() {
            // +2: one-based and after the header line.
            let line = i + 2;
            let generation = r.generation();
            if generation < state.generation {
                return Err(SkillbookError::Corrupt { line, message: "generation goes backwards".into() });
            }
            state.generation = generation;
            match r {
                Record::Tombstone { id, generation } => {
                    let Some(e) = state.entries.get_mut(&id) else {
                        return Err(SkillbookError::Corrupt {
                            line,
                            message: format!("tombstone for unknown id {id}"),
                        });
                    };
                    let e = Arc::make_mut(e);
                    e.active = false;
                    e.deactivated_at = Some(generation);
                }
                r => {
                    let e = r.into_entry().expect("entry record");
                    if !e.key.dimensions_consistent(state.header.embedding_dimension) {
                        return Err(SkillbookError::Corrupt { line, message: "vector dimension mismatch".into() });
                    }
                    if state.entries.contains_key(&e.id) {
                        return Err(SkillbookError::Corrupt { line, message: format!("duplicate id {}", e.id) });
                    }
                    state.next_id = state.next_id.max(e.id + 1);
                    state.entries.insert(e.id, Arc::new(e));
                }
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Insert(NewEntry),
    Deactivate(EntryId),
}

/// A set of mutations published as one generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    ops: Vec<Op>,
}

impl Batch {
    pub fn new() -> Self {
        Batch::default()
    }

    pub fn insert(&mut self, entry: NewEntry) -> &mut Self {
        self.ops.push(Op::Insert(entry));
        self
    }

    pub fn deactivate(&mut self, id: EntryId) -> &mut Self {
        self.ops.push(Op::Deactivate(id));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub generation: u64,
    pub inserted: Vec<EntryId>,
    pub deactivated: usize,
}

/// The shared, mutable skillbook handle.
pub struct Skillbook {
    state: RwLock<Snapshot>,
    /// Serializes writers; holds the append handle when file-backed.
    writer: Mutex<Option<Appender>>,
    /// Held by the offline clustering job.
    job: Mutex<()>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for Skillbook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Skillbook").field("path", &self.path).field("generation", &self.generation()).finish()
    }
}

impl Skillbook {
    pub fn in_memory(header: Header) -> Self {
        Skillbook {
            state: RwLock::new(Arc::new(BookState::empty(header))),
            writer: Mutex::new(None),
            job: Mutex::new(()),
            path: None,
        }
    }

    /// Reads a store file into an in-memory book (no further appends).
    ///
    /// An empty file yields an empty book at generation 0 under `expected`.
    pub fn load(path: &Path, expected: &Header) -> Result<Self, SkillbookError> {
        let state = Self::read_state(path, expected)?;
        Ok(Skillbook { state: RwLock::new(Arc::new(state)), writer: Mutex::new(None), job: Mutex::new(()), path: None })
    }

    /// Opens a file-backed book, creating the file if needed. Every commit
    /// is appended before it becomes visible.
    pub fn open(path: &Path, expected: &Header) -> Result<Self, SkillbookError> {
        let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let state = if exists { Self::read_state(path, expected)? } else { BookState::empty(expected.clone()) };
        let appender = Appender::open(path, expected, !exists)?;
        Ok(Skillbook {
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Some(appender)),
            job: Mutex::new(()),
            path: Some(path.to_path_buf()),
        })
    }

    fn read_state(path: &Path, expected: &Header) -> Result<BookState, SkillbookError> {
        let loaded = store::read(path)?;
        let Some(header) = loaded.header else {
            return Ok(BookState::empty(expected.clone()));
        };
        if header != *expected {
            return Err(SkillbookError::HeaderMismatch {
                expected: store::to_line(expected),
                found: store::to_line(&header),
            });
        }
        BookState::from_records(header, loaded.records)
    }

    /// Writes the full record log to `path` (atomic replace).
    pub fn persist(&self, path: &Path) -> Result<(), SkillbookError> {
        let snap = self.snapshot();
        store::write_all(path, &snap.header, &snap.records())
    }

    /// An independent in-memory copy of the current generation.
    pub fn fork(&self) -> Skillbook {
        let snap = self.snapshot();
        Skillbook {
            state: RwLock::new(Arc::new((*snap).clone())),
            writer: Mutex::new(None),
            job: Mutex::new(()),
            path: None,
        }
    }

    /// Claims the clustering job slot; `None` while another job holds it.
    pub fn try_lock_job(&self) -> Option<std::sync::MutexGuard<'_, ()>> {
        match self.job.try_lock() {
            Ok(g) => Some(g),
            Err(std::sync::TryLockError::Poisoned(p)) => Some(p.into_inner()),
            Err(std::sync::TryLockError::WouldBlock) => None,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn header(&self) -> Header {
        self.snapshot().header.clone()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.state.read().expect("skillbook lock poisoned").clone()
    }

    pub fn generation(&self) -> u64 {
        self.snapshot().generation
    }

    pub fn stats(&self) -> Stats {
        self.snapshot().stats()
    }

    pub fn retrieve(
        &self,
        query: &RetrievalQuery,
        params: &RetrievalParams,
    ) -> Result<RetrievalResult, SkillbookError> {
        self.snapshot().retrieve(query, params)
    }

    pub fn insert(&self, entry: NewEntry) -> Result<EntryId, SkillbookError> {
        let mut b = Batch::new();
        b.insert(entry);
        Ok(self.commit(b)?.inserted[0])
    }

    pub fn deactivate(&self, ids: &[EntryId]) -> Result<usize, SkillbookError> {
        let mut b = Batch::new();
        for id in ids {
            b.deactivate(*id);
        }
        Ok(self.commit(b)?.deactivated)
    }

    /// Validates and publishes a batch as exactly one new generation.
    /// Any invalid op rejects the whole batch. An empty batch is a no-op.
    pub fn commit(&self, batch: Batch) -> Result<Commit, SkillbookError> {
        let mut writer = self.writer.lock().expect("skillbook writer poisoned");
        let current = self.snapshot();
        if batch.is_empty() {
            return Ok(Commit { generation: current.generation, inserted: Vec::new(), deactivated: 0 });
        }
        let mut next = (*current).clone();
        let generation = current.generation + 1;
        next.generation = generation;
        let mut lines = Vec::with_capacity(batch.len());
        let mut inserted = Vec::new();
        let mut deactivated = 0;
        for op in batch.ops {
            match op {
                Op::Insert(new) => {
                    next.validate_new(&new)?;
                    let id = match new.id {
                        Some(id) if next.entries.contains_key(&id) => return Err(SkillbookError::DuplicateId(id)),
                        Some(id) => id,
                        None => next.next_id,
                    };
                    next.next_id = next.next_id.max(id + 1);
                    let e = SkillbookEntry {
                        id,
                        key: new.key,
                        payload: new.payload,
                        provenance: new.provenance,
                        created_at: generation,
                        active: true,
                        deactivated_at: None,
                    };
                    lines.push(store::to_line(&Record::entry(&e)));
                    next.entries.insert(id, Arc::new(e));
                    inserted.push(id);
                }
                Op::Deactivate(id) => {
                    let e = next.entries.get_mut(&id).ok_or(SkillbookError::UnknownId(id))?;
                    if e.active {
                        let e = Arc::make_mut(e);
                        e.active = false;
                        e.deactivated_at = Some(generation);
                        lines.push(store::to_line(&Record::Tombstone { generation, id }));
                        deactivated += 1;
                    }
                }
            }
        }
        if lines.is_empty() {
            return Ok(Commit { generation: current.generation, inserted, deactivated });
        }
        if let Some(appender) = writer.as_mut() {
            appender.append(&lines)?;
        }
        *self.state.write().expect("skillbook lock poisoned") = Arc::new(next);
        Ok(Commit { generation, inserted, deactivated })
    }
}
