//! Text embeddings used as skillbook keys and retrieval queries.
//!
//! Two backends sit behind [`Embedder`]: a deterministic feature-hashing
//! embedder (word unigrams and bigrams, signed hashing into `d` buckets,
//! L2-normalized) and an HTTP client for an external embedding service.

use std::hash::{Hash, Hasher};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::SceneGraph;

pub const DEFAULT_DIMENSION: usize = 256;

/// `action_text` of the shared global key.
pub const GLOBAL_MARKER: &str = "<global>";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbedError {
    #[error("embedding service unavailable: {0}")]
    Unavailable(String),
    #[error("embedding dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A unit vector, or the zero vector for empty text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Eq for Vector {}

impl Hash for Vector {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for v in &self.0 {
            v.to_bits().hash(state);
        }
    }
}

impl Vector {
    pub fn zeros(dimension: usize) -> Self {
        Vector(vec![0.0; dimension])
    }

    /// Normalizes `raw` to unit length; all-zero input stays zero.
    pub fn normalized(raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Vector(raw);
        }
        Vector(raw.into_iter().map(|x| x / norm).collect())
    }

    /// Wraps components verbatim (no normalization).
    pub fn from_raw(components: Vec<f64>) -> Self {
        Vector(components)
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &Vector, b: &Vector) -> f64 {
    if a.0.len() != b.0.len() {
        return 0.0;
    }
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    (dot / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

pub trait Embedder: Send + Sync {
    /// Stable identifier pinned in skillbook headers.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vector, EmbedError>;
}

/// Deterministic feature-hashing embedder.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_DIMENSION)
    }
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashingEmbedder { dimension }
    }

    fn features(text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        out.extend(words.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        out
    }
}

/// FNV-1a followed by a splitmix64 finalizer; stable across platforms.
fn feature_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-v1-d{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        let mut raw = vec![0.0; self.dimension];
        for f in Self::features(text) {
            let h = feature_hash(&f);
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            raw[bucket] += sign;
        }
        Ok(Vector::normalized(raw))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST /embed {texts:[...]} → {vectors:[[...]]}`.
pub struct RemoteEmbedder {
    endpoint: String,
    client: reqwest::blocking::Client,
    dimension: usize,
}

impl RemoteEmbedder {
    /// Connects and negotiates the dimension with a probe request.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        let endpoint = format!("{}/embed", base_url.trim_end_matches('/'));
        let mut this = RemoteEmbedder { endpoint, client, dimension: 0 };
        let probe = this.request(&["dimension probe"])?;
        this.dimension = probe
            .first()
            .map(Vec::len)
            .filter(|&d| d > 0)
            .ok_or_else(|| EmbedError::Unavailable("empty probe response".into()))?;
        Ok(this)
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Unavailable(format!("status {}", resp.status())));
        }
        let body: EmbedResponse = resp.json().map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::Unavailable("vector count mismatch".into()));
        }
        Ok(body.vectors)
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}:d{}", self.endpoint, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        if text.trim().is_empty() {
            return Ok(Vector::zeros(self.dimension));
        }
        let mut vectors = self.request(&[text])?;
        let v = vectors.pop().unwrap_or_default();
        if v.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch { expected: self.dimension, found: v.len() });
        }
        Ok(Vector::normalized(v))
    }
}

/// Key of a skillbook entry: action and object vectors, plus an optional
/// scene vector for state-conditioned retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub action_text: String,
    pub object_texts: Vec<String>,
    pub is_global: bool,
    pub v_act: Vector,
    pub v_obj: Vector,
    pub v_scene: Option<Vector>,
}

impl EmbeddingKey {
    /// The shared key under which task-invariant guidance is indexed.
    pub fn global(dimension: usize) -> Self {
        EmbeddingKey {
            action_text: GLOBAL_MARKER.to_string(),
            object_texts: Vec::new(),
            is_global: true,
            v_act: Vector::zeros(dimension),
            v_obj: Vector::zeros(dimension),
            v_scene: None,
        }
    }

    pub fn dimension(&self) -> usize {
        self.v_act.dimension()
    }

    pub fn dimensions_consistent(&self, dimension: usize) -> bool {
        self.v_act.dimension() == dimension
            && self.v_obj.dimension() == dimension
            && self.v_scene.as_ref().is_none_or(|v| v.dimension() == dimension)
    }

    /// "open | toaster door, toaster handle"
    pub fn label(&self) -> String {
        if self.is_global {
            return GLOBAL_MARKER.to_string();
        }
        format!("{} | {}", self.action_text, self.object_texts.join(", "))
    }
}

/// Builds a key from an action label, object labels, and optionally the scene.
///
/// `v_obj` is the renormalized mean of the object embeddings (zero when the
/// list is empty); the scene vector embeds [`SceneGraph::digest`].
pub fn embed_key(
    embedder: &dyn Embedder,
    action_text: &str,
    object_texts: &[String],
    scene: Option<&SceneGraph>,
) -> Result<EmbeddingKey, EmbedError> {
    let v_act = embedder.embed(action_text)?;
    let mut sorted: Vec<&String> = object_texts.iter().collect();
    sorted.sort();
    let mut sum = vec![0.0; embedder.dimension()];
    for text in sorted {
        let v = embedder.embed(text)?;
        for (s, x) in sum.iter_mut().zip(v.as_slice()) {
            *s += x;
        }
    }
    let v_obj = Vector::normalized(sum);
    let v_scene = match scene {
        Some(s) => Some(embedder.embed(&s.digest())?),
        None => None,
    };
    Ok(EmbeddingKey {
        action_text: action_text.to_string(),
        object_texts: object_texts.to_vec(),
        is_global: false,
        v_act,
        v_obj,
        v_scene,
    })
}
