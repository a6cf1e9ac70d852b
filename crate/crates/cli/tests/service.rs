use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::StreamExt;
use memo_cli::runtime::{CommonArgs, Runtime};
use memo_cli::service::{router, AppState, ServeOptions};
use memo_core::embedding::{embed_key, Embedder, HashingEmbedder, Vector};
use memo_core::feedback::ingest_corpus;
use memo_core::skillbook::{Header, Skillbook};
use serde_json::{json, Value};

struct Server {
    base: String,
    http: reqwest::Client,
}

async fn start(book: Arc<Skillbook>, opts: ServeOptions) -> Server {
    let rt = Runtime::from_args(&CommonArgs::default()).unwrap();
    let state = AppState::new(rt, book, opts);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    Server { base: format!("http://{addr}"), http: reqwest::Client::new() }
}

fn empty_book() -> Arc<Skillbook> {
    let e = HashingEmbedder::default();
    Arc::new(Skillbook::in_memory(Header::new(e.id(), e.dimension())))
}

fn corpus_book() -> Arc<Skillbook> {
    let book = empty_book();
    let rt = Runtime::from_args(&CommonArgs::default()).unwrap();
    let path = memo_core::asset_dir().join("corpus/feedback.jsonl");
    let r = ingest_corpus(&path, &book, &*rt.model, &rt.embedder, &rt.prompts).unwrap();
    assert_eq!(r.errors, 0);
    book
}

impl Server {
    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn episode(&self, task: &str, teacher: &str) -> u64 {
        let (code, v) = self.post("/episodes", json!({"task": task, "teacher": teacher})).await;
        assert_eq!(code, 201, "{v}");
        v["id"].as_u64().unwrap()
    }

    async fn events(&self, id: u64) -> Events {
        let r = self.http.get(format!("{}/episodes/{id}/events", self.base)).send().await.unwrap();
        assert_eq!(r.status().as_u16(), 200);
        assert_eq!(r.headers()["content-type"], "text/event-stream");
        Events { stream: Box::pin(r.bytes_stream().map(|c| c.map(|b| b.to_vec()))), buf: String::new() }
    }

    /// Polls the episode list, which does not count as console activity.
    async fn wait_finished(&self, id: u64, limit: Duration) -> Value {
        let start = Instant::now();
        loop {
            let (_, v) = self.get("/episodes").await;
            let e = v["episodes"].as_array().unwrap().iter().find(|e| e["id"] == id).unwrap().clone();
            if e["status"] == "finished" {
                return e;
            }
            assert!(start.elapsed() < limit, "episode {id} still {}", e["status"]);
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }
}

type ByteStream = std::pin::Pin<Box<dyn futures::Stream<Item = reqwest::Result<Vec<u8>>> + Send>>;

struct Events {
    stream: ByteStream,
    buf: String,
}

impl Events {
    /// Next data event; keep-alive comments are skipped.
    async fn next(&mut self) -> Option<(String, Value)> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut kind = None;
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(k) = line.strip_prefix("event:") {
                        kind = Some(k.trim().to_string());
                    } else if let Some(d) = line.strip_prefix("data:") {
                        data.push_str(d.trim_start());
                    }
                }
                if let Some(kind) = kind {
                    return Some((kind, serde_json::from_str(&data).unwrap()));
                }
                continue;
            }
            let chunk = tokio::time::timeout(Duration::from_secs(20), self.stream.next()).await.ok()??.ok()?;
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }

    async fn until(&mut self, kind: &str) -> Value {
        loop {
            let (k, v) = self.next().await.unwrap_or_else(|| panic!("stream ended before `{kind}`"));
            if k == kind {
                return v;
            }
        }
    }
}

fn quick() -> ServeOptions {
    ServeOptions { step_delay: Duration::ZERO, heartbeat: Duration::from_millis(200) }
}

#[tokio::test(flavor = "multi_thread")]
async fn stats_of_a_fresh_book_are_zero() {
    let s = start(empty_book(), quick()).await;
    let (code, v) = s.get("/skillbook/stats").await;
    assert_eq!(code, 200);
    assert_eq!(v["schema_version"], 1);
    for (k, n) in v["stats"].as_object().unwrap() {
        assert_eq!(n, 0, "{k}");
    }
    let (code, v) = s.get("/skillbook/entries").await;
    assert_eq!(code, 200);
    assert_eq!(v["entries"], json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_ids_and_tasks_are_404() {
    let s = start(empty_book(), quick()).await;
    let (code, v) = s.get("/episodes/99/state").await;
    assert_eq!(code, 404);
    assert_eq!(v["schema_version"], 1);
    assert!(v["error"].as_str().unwrap().contains("99"));
    let (code, _) = s.post("/episodes/99/interrupt", json!({})).await;
    assert_eq!(code, 404);
    let (code, v) = s.post("/episodes", json!({"task": "juggle the plates"})).await;
    assert_eq!(code, 404);
    assert!(v["tasks"].as_array().unwrap().iter().any(|t| t == "make toast"));
}

#[tokio::test(flavor = "multi_thread")]
async fn feedback_and_verdicts_need_a_waiting_robot() {
    let opts = ServeOptions { step_delay: Duration::from_millis(100), heartbeat: Duration::from_millis(200) };
    let s = start(empty_book(), opts).await;
    let id = s.episode("make toast", "none").await;
    let (code, v) = s.post(&format!("/episodes/{id}/feedback"), json!({"text": "grab the handle"})).await;
    assert_eq!(code, 409, "{v}");
    assert_eq!(v["schema_version"], 1);
    let (code, _) = s.post(&format!("/episodes/{id}/verdict"), json!({"subtask_ok": true})).await;
    assert_eq!(code, 409);
    s.wait_finished(id, Duration::from_secs(30)).await;
    let (code, _) = s.post(&format!("/episodes/{id}/interrupt"), json!({})).await;
    assert_eq!(code, 409);
}

#[tokio::test(flavor = "multi_thread")]
async fn an_interrupt_correction_resets_the_subtask_and_reaches_the_next_retrieval() {
    let book = empty_book();
    let opts = ServeOptions { step_delay: Duration::from_millis(100), heartbeat: Duration::from_millis(300) };
    let s = start(book.clone(), opts).await;
    let id = s.episode("make toast", "console").await;
    let mut ev = s.events(id).await;
    let first = ev.until("retrieval").await;
    let g0 = first["log"]["generation"].as_u64().unwrap();
    assert_eq!(first["episode"], id);
    let step = ev.until("step").await;
    assert_eq!(step["subtask"], 0);

    let (code, _) = s.post(&format!("/episodes/{id}/interrupt"), json!({})).await;
    assert_eq!(code, 202);
    let awaiting = ev.until("awaiting").await;
    assert_eq!(awaiting["reason"], "feedback");
    let (_, state) = s.get(&format!("/episodes/{id}/state")).await;
    assert_eq!(state["awaiting_feedback"], true);
    assert_eq!(state["status"], "awaiting_feedback");
    assert_eq!(state["current_subtask"]["index"], 0);
    assert!(state["last_program"].as_str().unwrap().contains("grasp"));
    assert!(state["world"].is_object());

    let (code, v) =
        s.post(&format!("/episodes/{id}/feedback"), json!({"text": "grab the handle, not the door itself"})).await;
    assert_eq!(code, 200, "{v}");
    assert_eq!(v["feedback"]["interrupted"], true);
    assert_eq!(v["feedback"]["raw_text"], "grab the handle, not the door itself");
    let entries = v["entries"].as_array().unwrap();
    assert!(!entries.is_empty());
    assert!(entries.iter().all(|e| e["source"] == "human" && e["active"] == true));
    let g1 = v["feedback"]["generation"].as_u64().unwrap();
    assert!(g1 > g0);

    let resumed = ev.until("resumed").await;
    assert_eq!(resumed["autonomous"], false);
    let fb = ev.until("feedback").await;
    assert_eq!(fb["log"]["generation"].as_u64(), Some(g1));
    let reset = ev.until("reset").await;
    assert_eq!(reset["subtask"], 0);
    let next = ev.until("retrieval").await;
    assert_eq!(next["subtask"], 0);
    assert_eq!(next["attempt"], 2);
    assert!(next["log"]["generation"].as_u64().unwrap() >= g1);
    let ranked: Vec<u64> =
        next["log"]["ranked"].as_array().unwrap().iter().map(|r| r["id"].as_u64().unwrap()).collect();
    let local = entries.iter().find(|e| e["kind"] == "guidance").unwrap()["id"].as_u64().unwrap();
    assert!(ranked.contains(&local), "correction {local} retrieved in {ranked:?}");

    // Close the stream; the remaining reviews time out and the episode finishes alone.
    drop(ev);
    s.wait_finished(id, Duration::from_secs(60)).await;
    let (_, state) = s.get(&format!("/episodes/{id}/state")).await;
    assert_eq!(state["feedback_count"], 1);
    assert_eq!(state["result"]["subtask_log"][0]["attempts"][0]["feedback"]["interrupted"], true);
}

#[tokio::test(flavor = "multi_thread")]
async fn a_silent_console_does_not_block_the_episode() {
    let s = start(empty_book(), quick()).await;
    let id = s.episode("pick the left can", "console").await;
    let done = s.wait_finished(id, Duration::from_secs(30)).await;
    assert_eq!(done["outcome"], "success");
    // The finished history replays in full and then ends.
    let mut ev = s.events(id).await;
    let mut seen = Vec::new();
    while let Some((k, v)) = ev.next().await {
        assert_eq!(v["seq"].as_u64(), Some(seen.len() as u64));
        seen.push((k, v));
    }
    assert_eq!(seen.last().map(|(k, _)| k.as_str()), Some("finished"));
    // Every wait ended by the heartbeat, never by an answer.
    for (i, (k, _)) in seen.iter().enumerate() {
        if k == "awaiting" {
            let (next, v) = &seen[i + 1];
            assert_eq!((next.as_str(), &v["autonomous"]), ("resumed", &json!(true)));
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn a_console_that_leaves_mid_review_hands_back_control() {
    let s = start(empty_book(), quick()).await;
    let id = s.episode("pick the left can", "console").await;
    let mut ev = s.events(id).await;
    let awaiting = ev.until("awaiting").await;
    assert_eq!(awaiting["reason"], "review");
    drop(ev);
    s.wait_finished(id, Duration::from_secs(30)).await;
    let mut ev = s.events(id).await;
    let resumed = ev.until("resumed").await;
    assert_eq!(resumed["autonomous"], true);
}

#[tokio::test(flavor = "multi_thread")]
async fn verdicts_override_the_automatic_check() {
    let opts = ServeOptions { step_delay: Duration::ZERO, heartbeat: Duration::from_secs(30) };
    let s = start(empty_book(), opts).await;
    let id = s.episode("pick the left can", "console").await;
    let mut ev = s.events(id).await;
    ev.until("awaiting").await;
    let (_, state) = s.get(&format!("/episodes/{id}/state")).await;
    assert_eq!(state["awaiting"], "review");
    let (code, _) = s.post(&format!("/episodes/{id}/verdict"), json!({"subtask_ok": false})).await;
    assert_eq!(code, 202);
    let finished = ev.until("finished").await;
    assert_eq!(finished["outcome"], "failure");
    assert_eq!(finished["feedback_count"], 0);
}

fn cos(a: &Vector, b: &Vector) -> f64 {
    let (a, b) = (a.as_slice(), b.as_slice());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn entry_queries_rank_like_a_brute_force_scan() {
    let book = corpus_book();
    let s = start(book.clone(), quick()).await;
    let (code, v) = s.get("/skillbook/entries?query=put%7Ctrash%2C%20bin").await;
    assert_eq!(code, 200);

    let e = HashingEmbedder::default();
    let q = embed_key(&e, "put", &["trash".into(), "bin".into()], None).unwrap();
    let snap = book.snapshot();
    let mut want: Vec<(u64, f64)> = snap
        .active()
        .filter(|x| !x.is_global())
        .map(|x| (x.id, (cos(&q.v_act, &x.key.v_act) + cos(&q.v_obj, &x.key.v_obj)) / 2.0))
        .collect();
    want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let listed = v["entries"].as_array().unwrap();
    let scored: Vec<(u64, f64)> = listed
        .iter()
        .filter(|x| x["score"].is_number())
        .map(|x| (x["id"].as_u64().unwrap(), x["score"].as_f64().unwrap()))
        .collect();
    assert_eq!(scored.len(), want.len());
    for ((id, sc), (wid, ws)) in scored.iter().zip(&want) {
        assert_eq!(id, wid);
        assert!((sc - ws).abs() < 1e-12);
    }
    let top: Vec<u64> = want.iter().filter(|(_, s)| *s >= 0.35).take(4).map(|(id, _)| *id).collect();
    let ranked: Vec<u64> =
        v["retrieval"]["ranked"].as_array().unwrap().iter().map(|r| r["id"].as_u64().unwrap()).collect();
    assert_eq!(ranked, top);

    let (code, _) = s.get("/skillbook/entries?active=maybe").await;
    assert_eq!(code, 400);
}

#[tokio::test(flavor = "multi_thread")]
async fn inactive_entries_are_listed_on_request() {
    let book = corpus_book();
    book.deactivate(&[1, 2]).unwrap();
    let s = start(book.clone(), quick()).await;
    let (_, active) = s.get("/skillbook/entries").await;
    let (_, inactive) = s.get("/skillbook/entries?active=false").await;
    let (_, all) = s.get("/skillbook/entries?active=all").await;
    let ids =
        |v: &Value| v["entries"].as_array().unwrap().iter().map(|e| e["id"].as_u64().unwrap()).collect::<Vec<_>>();
    assert_eq!(ids(&inactive), vec![1, 2]);
    assert_eq!(ids(&active).len() + 2, ids(&all).len());
    assert!(inactive["entries"][0]["deactivated_at"].is_number());
}

#[tokio::test(flavor = "multi_thread")]
#[allow(clippy::await_holding_lock)] // the handler only try-locks
async fn clustering_reports_and_refuses_concurrent_jobs() {
    let book = corpus_book();
    let s = start(book.clone(), quick()).await;
    {
        let _held = book.try_lock_job().unwrap();
        let (code, v) = s.post("/cluster", json!({})).await;
        assert_eq!(code, 409);
        assert_eq!(v["schema_version"], 1);
    }
    let before = book.stats();
    let (code, v) = s.post("/cluster", json!({})).await;
    assert_eq!(code, 200, "{v}");
    let r = &v["report"];
    assert!(r["clusters"].as_u64().unwrap() > 0);
    assert!(r["char_after"].as_u64().unwrap() <= r["char_before"].as_u64().unwrap());
    assert_eq!(r["generation_after"].as_u64(), Some(before.generation + 1));
    let (_, stats) = s.get("/skillbook/stats").await;
    assert!(stats["stats"]["guidance_active"].as_u64().unwrap() < before.guidance_active as u64);
}
