mod common;

use common::oracle::{self, DIM};
use memo_core::embedding::{EmbeddingKey, Vector};
use memo_core::skillbook::{
    Header, NewEntry, Payload, PayloadKind, Provenance, RetrievalParams, RetrievalQuery, Skillbook, SkillbookError,
    Source,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn key2(act: [f64; 2], obj: [f64; 2]) -> EmbeddingKey {
    EmbeddingKey {
        action_text: "a".into(),
        object_texts: vec!["o".into()],
        is_global: false,
        v_act: Vector::from_raw(act.to_vec()),
        v_obj: Vector::from_raw(obj.to_vec()),
        v_scene: None,
    }
}

fn guidance(key: EmbeddingKey, text: &str) -> NewEntry {
    NewEntry::new(key, Payload::Guidance { text: text.into() }, Provenance::new("t", Source::Human, 0))
}

fn two_dim_book() -> Skillbook {
    Skillbook::in_memory(Header::new("test-2d", 2))
}

#[test]
fn identical_key_scores_one_and_ranks_first() {
    let book = two_dim_book();
    let target = book.insert(guidance(key2([1.0, 0.0], [0.0, 1.0]), "target")).unwrap();
    book.insert(guidance(key2([0.6, 0.8], [0.0, 1.0]), "other")).unwrap();
    let q = RetrievalQuery::from_key(&key2([1.0, 0.0], [0.0, 1.0]));
    let r = book.retrieve(&q, &RetrievalParams::default()).unwrap();
    assert_eq!(r.ranked[0].id, target);
    assert!((r.ranked[0].score - 1.0).abs() <= 1e-9);
}

#[test]
fn half_score_when_only_the_action_matches() {
    let book = two_dim_book();
    book.insert(guidance(key2([1.0, 0.0], [0.0, 1.0]), "x")).unwrap();
    let q = RetrievalQuery::from_key(&key2([1.0, 0.0], [1.0, 0.0]));
    let r = book.retrieve(&q, &RetrievalParams::default()).unwrap();
    assert!((r.ranked[0].score - 0.5).abs() <= 1e-9);
}

#[test]
fn weighted_score_matches_direct_evaluation() {
    let book = two_dim_book();
    let s = |c: f64| [c, (1.0 - c * c).sqrt()];
    book.insert(guidance(key2(s(0.9), s(0.3)), "x")).unwrap();
    let q = RetrievalQuery::from_key(&key2([1.0, 0.0], [1.0, 0.0]));
    let p = RetrievalParams { lambda_act: 2.0, lambda_obj: 1.0, theta_min: 0.0, ..Default::default() };
    let r = book.retrieve(&q, &p).unwrap();
    let expected = oracle::direct_score(&p, &q, &book.snapshot().entries().next().unwrap().key);
    assert!((r.ranked[0].score - expected).abs() <= 1e-12);
    assert!((r.ranked[0].score - (2.0 * 0.9 + 0.3) / 3.0).abs() <= 1e-9);
}

#[test]
fn empty_book_retrieves_nothing() {
    let r =
        two_dim_book().retrieve(&RetrievalQuery::from_key(&key2([1.0, 0.0], [1.0, 0.0])), &RetrievalParams::default());
    let r = r.unwrap();
    assert!(r.ranked.is_empty() && r.globals.is_empty());
}

#[test]
fn invalid_weights_are_rejected() {
    let q = RetrievalQuery::from_key(&key2([1.0, 0.0], [1.0, 0.0]));
    for p in [
        RetrievalParams { lambda_act: 0.0, ..Default::default() },
        RetrievalParams { lambda_scene: -1.0, ..Default::default() },
        RetrievalParams { k: 0, ..Default::default() },
    ] {
        assert!(matches!(two_dim_book().retrieve(&q, &p), Err(SkillbookError::InvalidQuery(_))));
    }
}

#[test]
fn deactivated_entries_leave_retrieval_but_stay_in_old_snapshots() {
    let book = two_dim_book();
    let ids: Vec<_> =
        (0..3).map(|i| book.insert(guidance(key2([1.0, 0.0], [1.0, 0.0]), &format!("g{i}"))).unwrap()).collect();
    let before = book.snapshot();
    let generation = book.generation();
    assert_eq!(book.deactivate(&ids).unwrap(), 3);
    assert_eq!(book.generation(), generation + 1);
    let q = RetrievalQuery::from_key(&key2([1.0, 0.0], [1.0, 0.0]));
    assert!(book.retrieve(&q, &RetrievalParams::default()).unwrap().ranked.is_empty());
    assert_eq!(before.retrieve(&q, &RetrievalParams::default()).unwrap().ranked.len(), 3);
    assert!(matches!(book.deactivate(&[999]), Err(SkillbookError::UnknownId(999))));
}

#[test]
fn snapshots_without_writes_are_identical() {
    let book = oracle::random_book(3, 40);
    let a = book.snapshot();
    let b = book.snapshot();
    assert_eq!(a.generation(), book.generation());
    assert_eq!(oracle::records(&a), oracle::records(&b));
}

#[test]
fn persist_and_load_round_trip() {
    let book = oracle::random_book(11, 224);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("book.jsonl");
    book.persist(&path).unwrap();
    let loaded = Skillbook::load(&path, &oracle::header()).unwrap();
    assert_eq!(oracle::records(&loaded.snapshot()), oracle::records(&book.snapshot()));
    assert_eq!(loaded.generation(), book.generation());
    assert_eq!(loaded.stats(), book.stats());
}

#[test]
fn truncated_last_line_names_the_line() {
    let book = oracle::random_book(5, 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("book.jsonl");
    book.persist(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines = text.lines().count();
    std::fs::write(&path, &text[..text.len() - 20]).unwrap();
    match Skillbook::load(&path, &oracle::header()) {
        Err(SkillbookError::Corrupt { line, .. }) => assert_eq!(line, lines),
        other => panic!("expected corrupt-line error, got {other:?}"),
    }
}

#[test]
fn empty_file_is_an_empty_book() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("book.jsonl");
    std::fs::write(&path, "").unwrap();
    let book = Skillbook::load(&path, &oracle::header()).unwrap();
    assert_eq!(book.generation(), 0);
    assert_eq!(book.stats().total(), 0);
}

#[test]
fn embedder_mismatch_is_refused() {
    let book = oracle::random_book(5, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("book.jsonl");
    book.persist(&path).unwrap();
    let other = Header::new("other-embedder", DIM);
    assert!(matches!(Skillbook::load(&path, &other), Err(SkillbookError::HeaderMismatch { .. })));
}

#[test]
fn file_backed_book_appends_every_commit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("book.jsonl");
    let book = Skillbook::open(&path, &oracle::header()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..5 {
        book.insert(guidance(oracle::random_key(&mut rng, true), &format!("g{i}"))).unwrap();
    }
    book.deactivate(&[2]).unwrap();
    let reopened = Skillbook::open(&path, &oracle::header()).unwrap();
    assert_eq!(oracle::records(&reopened.snapshot()), oracle::records(&book.snapshot()));
    assert_eq!(reopened.generation(), 6);
}

#[test]
fn stats_count_kinds_and_characters() {
    let book = two_dim_book();
    book.insert(guidance(key2([1.0, 0.0], [1.0, 0.0]), "abc")).unwrap();
    book.insert(guidance(key2([1.0, 0.0], [1.0, 0.0]), "de")).unwrap();
    let s = book.stats();
    assert_eq!((s.guidance_active, s.template_active, s.guidance_chars), (2, 0, 5));
    let snap = book.snapshot();
    assert!(snap.entries().all(|e| e.kind() == PayloadKind::Guidance));
}

#[test]
fn retrieval_matches_the_oracle_on_random_books() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for seed in 0..5 {
        let book = oracle::random_book(seed, 300);
        let snap = book.snapshot();
        for _ in 0..40 {
            let q = oracle::random_query(&mut rng);
            let p = oracle::random_params(&mut rng);
            let r = book.retrieve(&q, &p).unwrap();
            let (ranked, globals) = oracle::retrieve(&snap, &q, &p);
            assert_eq!(
                r.ranked.iter().map(|s| s.id).collect::<Vec<_>>(),
                ranked.iter().map(|s| s.0).collect::<Vec<_>>()
            );
            for (a, b) in r.ranked.iter().zip(&ranked) {
                assert!((a.score - b.1).abs() <= 1e-12);
            }
            assert_eq!(r.globals, globals);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_stay_within_unit_bounds(seed in 0u64..1000, qseed in 0u64..1000) {
        let book = oracle::random_book(seed, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(qseed);
        let q = oracle::random_query(&mut rng);
        let p = RetrievalParams { theta_min: -2.0, k: 100, ..oracle::random_params(&mut rng) };
        for s in book.retrieve(&q, &p).unwrap().ranked {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s.score));
        }
    }

    #[test]
    fn higher_object_similarity_never_lowers_the_score(
        act in -1.0f64..1.0, lo in -1.0f64..1.0, hi in -1.0f64..1.0, la in 0.1f64..3.0, lobj in 0.1f64..3.0,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let unit = |c: f64| [c, (1.0 - c * c).max(0.0).sqrt()];
        let q = RetrievalQuery::from_key(&key2([1.0, 0.0], [1.0, 0.0]));
        let p = RetrievalParams { lambda_act: la, lambda_obj: lobj, ..Default::default() };
        let s_lo = memo_core::skillbook::score(&p, &q, &key2(unit(act), unit(lo)));
        let s_hi = memo_core::skillbook::score(&p, &q, &key2(unit(act), unit(hi)));
        prop_assert!(s_hi >= s_lo - 1e-12);
    }

    #[test]
    fn globals_never_ranked_and_always_listed(seed in 0u64..500, qseed in 0u64..500) {
        let book = oracle::random_book(seed, 80);
        let snap = book.snapshot();
        let mut rng = ChaCha8Rng::seed_from_u64(qseed);
        let q = oracle::random_query(&mut rng);
        let p = RetrievalParams { max_globals: 1000, theta_min: -2.0, k: 1000, ..Default::default() };
        let r = book.retrieve(&q, &p).unwrap();
        let active_globals: Vec<_> = snap.active().filter(|e| e.is_global()).map(|e| e.id).collect();
        prop_assert_eq!(r.globals.len(), active_globals.len());
        for s in &r.ranked {
            prop_assert!(!snap.get(s.id).unwrap().is_global());
        }
    }
}
