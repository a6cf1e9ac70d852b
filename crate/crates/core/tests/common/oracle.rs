//! Independent reference implementations used as test oracles.

use memo_core::embedding::{EmbeddingKey, Vector};
use memo_core::skillbook::{
    BookState, EntryId, Header, NewEntry, Payload, Provenance, RetrievalParams, RetrievalQuery, Skillbook, Source,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIM: usize = 16;

pub fn header() -> Header {
    Header::new("test-random", DIM)
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The retrieval formula evaluated directly.
pub fn direct_score(p: &RetrievalParams, q: &RetrievalQuery, k: &EmbeddingKey) -> f64 {
    let mut num = p.lambda_act * cos(q.q_act.as_slice(), k.v_act.as_slice())
        + p.lambda_obj * cos(q.q_obj.as_slice(), k.v_obj.as_slice());
    let mut den = p.lambda_act + p.lambda_obj;
    if let (Some(a), Some(b)) = (&q.q_scene, &k.v_scene) {
        num += p.lambda_scene * cos(a.as_slice(), b.as_slice());
        den += p.lambda_scene;
    }
    num / den
}

/// Brute force: score every active non-global entry, filter, sort by score
/// descending then id ascending, cut to k. Globals newest first, capped.
pub fn retrieve(state: &BookState, q: &RetrievalQuery, p: &RetrievalParams) -> (Vec<(EntryId, f64)>, Vec<EntryId>) {
    let mut ranked: Vec<(EntryId, f64)> = state
        .entries()
        .filter(|e| e.active && !e.key.is_global)
        .map(|e| (e.id, direct_score(p, q, &e.key)))
        .filter(|(_, s)| *s >= p.theta_min)
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(p.k);
    let mut globals: Vec<(u64, EntryId)> =
        state.entries().filter(|e| e.active && e.key.is_global).map(|e| (e.created_at, e.id)).collect();
    globals.sort_by(|a, b| b.cmp(a));
    globals.truncate(p.max_globals);
    (ranked, globals.into_iter().map(|(_, id)| id).collect())
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    // Few distinct directions so that ties actually occur.
    let base = rng.random_range(0..6u32);
    let raw: Vec<f64> =
        (0..dim).map(|i| if (i as u32 + base) % 3 == 0 { 1.0 } else { rng.random_range(-1.0..1.0) * 0.3 }).collect();
    if rng.random_bool(0.3) {
        let v: Vec<f64> = (0..dim).map(|i| ((i as u32 * 7 + base) % 5) as f64 - 2.0).collect();
        return Vector::normalized(v);
    }
    Vector::normalized(raw)
}

pub fn random_key(rng: &mut ChaCha8Rng, with_scene: bool) -> EmbeddingKey {
    random_key_dim(rng, with_scene, DIM)
}

pub fn random_key_dim(rng: &mut ChaCha8Rng, with_scene: bool, dim: usize) -> EmbeddingKey {
    EmbeddingKey {
        action_text: format!("act{}", rng.random_range(0..10u32)),
        object_texts: vec![format!("obj{}", rng.random_range(0..10u32))],
        is_global: false,
        v_act: random_vector(rng, dim),
        v_obj: random_vector(rng, dim),
        v_scene: with_scene.then(|| random_vector(rng, dim)),
    }
}

pub fn random_query(rng: &mut ChaCha8Rng) -> RetrievalQuery {
    random_query_dim(rng, DIM)
}

pub fn random_query_dim(rng: &mut ChaCha8Rng, dim: usize) -> RetrievalQuery {
    let scene = rng.random_bool(0.5);
    let key = random_key_dim(rng, scene, dim);
    RetrievalQuery::from_key(&key)
}

pub fn random_params(rng: &mut ChaCha8Rng) -> RetrievalParams {
    RetrievalParams {
        lambda_act: rng.random_range(0.1..3.0),
        lambda_obj: rng.random_range(0.1..3.0),
        lambda_scene: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..2.0) },
        k: rng.random_range(1..12),
        theta_min: rng.random_range(-0.5..0.8),
        max_globals: rng.random_range(0..6),
    }
}

/// A book of `n` random entries: mostly guidance, some globals, and a few deactivated, spread over several generations.
pub fn random_book(seed: u64, n: usize) -> Skillbook {
    random_book_dim(seed, n, DIM)
}

pub fn random_book_dim(seed: u64, n: usize, dim: usize) -> Skillbook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let book = Skillbook::in_memory(Header::new("test-random", dim));
    let mut ids = Vec::new();
    let mut i = 0;
    while i < n {
        let mut batch = memo_core::skillbook::Batch::new();
        let chunk = rng.random_range(1..50).min(n - i);
        for _ in 0..chunk {
            let global = rng.random_bool(0.05);
            let scene = rng.random_bool(0.5);
            let (key, payload) = if global {
                (EmbeddingKey::global(dim), Payload::GlobalGuidance { text: format!("global rule {i}") })
            } else {
                (random_key_dim(&mut rng, scene, dim), Payload::Guidance { text: format!("guidance {i}") })
            };
            batch.insert(NewEntry::new(key, payload, Provenance::new("random", Source::Human, i as u64)));
            i += 1;
        }
        ids.extend(book.commit(batch).unwrap().inserted);
    }
    let dead: Vec<EntryId> = ids.iter().copied().filter(|_| rng.random_bool(0.1)).collect();
    if !dead.is_empty() {
        book.deactivate(&dead).unwrap();
    }
    book
}

pub fn records(state: &BookState) -> Vec<memo_core::skillbook::SkillbookEntry> {
    state.entries().cloned().collect()
}
