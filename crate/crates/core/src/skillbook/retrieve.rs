use serde::{Deserialize, Serialize};

use super::{EntryId, SkillbookError};
use crate::embedding::{cosine, EmbeddingKey, Vector};

/// Weights and cut-offs of the retrieval score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub lambda_act: f64,
    pub lambda_obj: f64,
    pub lambda_scene: f64,
    pub k: usize,
    pub theta_min: f64,
    pub max_globals: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams { lambda_act: 1.0, lambda_obj: 1.0, lambda_scene: 0.0, k: 4, theta_min: 0.35, max_globals: 8 }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), SkillbookError> {
        let bad = |m: &str| Err(SkillbookError::InvalidQuery(m.to_string()));
        if !(self.lambda_act > 0.0 && self.lambda_obj > 0.0) {
            return bad("action and object weights must be positive");
        }
        if !(self.lambda_scene >= 0.0) {
            return bad("scene weight must be non-negative");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.theta_min.is_nan() {
            return bad("threshold is NaN");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub q_act: Vector,
    pub q_obj: Vector,
    pub q_scene: Option<Vector>,
    pub raw_action: String,
    pub raw_objects: Vec<String>,
}

impl RetrievalQuery {
    pub fn from_key(key: &EmbeddingKey) -> Self {
        RetrievalQuery {
            q_act: key.v_act.clone(),
            q_obj: key.v_obj.clone(),
            q_scene: key.v_scene.clone(),
            raw_action: key.action_text.clone(),
            raw_objects: key.object_texts.clone(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.q_act.dimension()
    }
}

/// Weighted mean of the per-part cosines; the scene term joins numerator
/// and denominator only when both sides carry a scene vector.
pub fn score(params: &RetrievalParams, query: &RetrievalQuery, key: &EmbeddingKey) -> f64 {
    let mut num =
        params.lambda_act * cosine(&query.q_act, &key.v_act) + params.lambda_obj * cosine(&query.q_obj, &key.v_obj);
    let mut den = params.lambda_act + params.lambda_obj;
    if let (Some(q), Some(v)) = (&query.q_scene, &key.v_scene) {
        num += params.lambda_scene * cosine(q, v);
        den += params.lambda_scene;
    }
    num / den
}

/// Score of one key against another, as used for cluster membership.
pub fn key_score(params: &RetrievalParams, a: &EmbeddingKey, b: &EmbeddingKey) -> f64 {
    score(params, &RetrievalQuery::from_key(a), b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: EntryId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Score descending, ties by ascending id; every score ≥ the threshold.
    pub ranked: Vec<Scored>,
    /// Active global entries, most recent first, capped at `max_globals`.
    pub globals: Vec<EntryId>,
    pub generation: u64,
}

impl RetrievalResult {
    pub fn empty(generation: u64) -> Self {
        RetrievalResult { ranked: Vec::new(), globals: Vec::new(), generation }
    }
}

pub(super) fn rank(mut scored: Vec<Scored>, k: usize) -> Vec<Scored> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    scored.truncate(k);
    scored
}
