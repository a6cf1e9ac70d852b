//! HTTP service for the steering console: episode control, skillbook
//! inspection and clustering.
//!
//! Each episode runs on its own thread. A console teacher bridges it to
//! HTTP: interrupts and reviews block the episode until the console answers
//! or goes quiet for longer than the heartbeat, after which the episode
//! continues with its fallback teacher.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use memo_core::cluster::{run_offline, ClusterError};
use memo_core::policy::{EpisodeEvent, EpisodeResult, NoTeacher, Outcome, Review, ReviewView, StepView, Teacher};
use memo_core::simenv::{ScriptedTeacher, SimEnv, World};
use memo_core::skillbook::{score, Skillbook, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::commands::{build_query, write_json, EntryView};
use crate::runtime::Runtime;

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    /// Pause after every executed skill call so a person can follow along.
    pub step_delay: Duration,
    /// How long a console may stay silent before the episode stops waiting.
    pub heartbeat: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { step_delay: Duration::from_millis(300), heartbeat: Duration::from_secs(30) }
    }
}

pub struct AppState {
    rt: Arc<Runtime>,
    book: Arc<Skillbook>,
    sessions: Mutex<BTreeMap<u64, Arc<Session>>>,
    next_id: AtomicU64,
    opts: ServeOptions,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(rt: Runtime, book: Arc<Skillbook>, opts: ServeOptions) -> Shared {
        Arc::new(AppState {
            rt: Arc::new(rt),
            book,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            opts,
        })
    }

    fn session(&self, id: u64) -> Result<Arc<Session>, ApiError> {
        let s = self.sessions.lock().expect("session table poisoned").get(&id).cloned();
        let s = s.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown episode {id}")))?;
        s.touch();
        Ok(s)
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/skillbook/entries", get(entries))
        .route("/skillbook/stats", get(stats))
        .route("/cluster", post(cluster))
        .route("/episodes", post(create_episode).get(list_episodes))
        .route("/episodes/{id}/state", get(episode_state))
        .route("/episodes/{id}/interrupt", post(interrupt))
        .route("/episodes/{id}/feedback", post(feedback))
        .route("/episodes/{id}/verdict", post(verdict))
        .route("/episodes/{id}/events", get(events))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// JSON error body `{schema_version, error, ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, body: json!({"schema_version": SCHEMA_VERSION, "error": message.into()}) }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn reply(status: StatusCode, mut body: Value) -> Response {
    body["schema_version"] = json!(SCHEMA_VERSION);
    (status, Json(body)).into_response()
}

#[derive(Debug, Deserialize)]
struct EntriesQuery {
    /// `true` (default), `false` or `all`.
    active: Option<String>,
    query: Option<String>,
}

async fn entries(State(st): State<Shared>, Query(q): Query<EntriesQuery>) -> Result<Response, ApiError> {
    let filter = match q.active.as_deref().unwrap_or("true") {
        "true" => Some(true),
        "false" => Some(false),
        "all" => None,
        other => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("active must be true, false or all, not `{other}`"),
            ))
        }
    };
    let snap = st.book.snapshot();
    let mut body = json!({"generation": snap.generation()});
    let mut scores = BTreeMap::new();
    if let Some(text) = q.query.as_deref().filter(|t| !t.trim().is_empty()) {
        let bad = |e: String| ApiError::new(StatusCode::BAD_REQUEST, e);
        let query = build_query(&st.rt, text).map_err(bad)?;
        let r = snap.retrieve(&query, &st.rt.config.retrieval).map_err(|e| bad(e.to_string()))?;
        // Every listed entry carries its score, not only the retrieved ones.
        for e in snap.entries().filter(|e| !e.is_global()) {
            scores.insert(e.id, score(&st.rt.config.retrieval, &query, &e.key));
        }
        body["retrieval"] = json!(r);
    }
    let mut views: Vec<EntryView> = snap
        .entries()
        .filter(|e| filter.is_none_or(|a| e.active == a))
        .map(|e| EntryView::new(e, scores.get(&e.id).copied()))
        .collect();
    if !scores.is_empty() {
        views.sort_by(|a, b| {
            let (sa, sb) = (a.score.unwrap_or(f64::NEG_INFINITY), b.score.unwrap_or(f64::NEG_INFINITY));
            sb.total_cmp(&sa).then(a.id.cmp(&b.id))
        });
    }
    body["entries"] = json!(views);
    Ok(reply(StatusCode::OK, body))
}

async fn stats(State(st): State<Shared>) -> Response {
    let snap = st.book.snapshot();
    reply(StatusCode::OK, json!({"stats": snap.stats(), "header": snap.header()}))
}

async fn cluster(State(st): State<Shared>) -> Result<Response, ApiError> {
    let job = st.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let rt = &job.rt;
        run_offline(&job.book, &*rt.model, &rt.prompts, &rt.config.retrieval, rt.config.theta_c)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let report = match outcome {
        Ok(r) => r,
        Err(ClusterError::Busy) => {
            return Err(ApiError::new(StatusCode::CONFLICT, "a clustering job is already running"));
        }
        Err(e) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    };
    if let Some(path) = st.book.path() {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".cluster-report.json");
        if let Err(e) = write_json(&path.with_file_name(name), &report) {
            tracing::warn!(error = %e, "cluster report not written");
        }
    }
    Ok(reply(StatusCode::OK, json!({"report": report})))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    /// Waits for the console at every review.
    #[default]
    Console,
    /// The task's correction script; the console can still interrupt.
    Scripted,
    /// No automatic corrections; the console can still interrupt.
    None,
}

#[derive(Debug, Deserialize)]
struct CreateEpisode {
    task: String,
    #[serde(default = "yes")]
    retrieval: bool,
    #[serde(default)]
    teacher: TeacherMode,
}

fn yes() -> bool {
    true
}

async fn create_episode(State(st): State<Shared>, Json(req): Json<CreateEpisode>) -> Result<Response, ApiError> {
    let Some(spec) = st.rt.suite.get(&req.task) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown task `{}`", req.task))
            .with("tasks", json!(st.rt.suite.names())));
    };
    let spec = Arc::new(spec.clone());
    let id = st.next_id.fetch_add(1, Ordering::Relaxed);
    let env = SimEnv::new(spec.clone());
    let session = Arc::new(Session::new(id, spec.name.clone(), req.teacher, req.retrieval, env.world().clone()));
    st.sessions.lock().expect("session table poisoned").insert(id, session.clone());

    let (rt, book, opts) = (st.rt.clone(), st.book.clone(), st.opts);
    std::thread::Builder::new()
        .name(format!("episode-{id}"))
        .spawn(move || {
            let mut env = env;
            let fallback: Box<dyn Teacher + Send> = match req.teacher {
                TeacherMode::Scripted => Box::new(ScriptedTeacher::new(spec.teacher_script())),
                TeacherMode::Console | TeacherMode::None => Box::new(NoTeacher),
            };
            let mut teacher = ConsoleTeacher {
                session: session.clone(),
                fallback,
                wait_at_review: req.teacher == TeacherMode::Console,
                heartbeat: opts.heartbeat,
            };
            let observer_session = session.clone();
            let mut observer = move |e: &EpisodeEvent| {
                observer_session.observe(e);
                if matches!(e, EpisodeEvent::Step { .. }) && !opts.step_delay.is_zero() {
                    std::thread::sleep(opts.step_delay);
                }
            };
            let policy = rt.policy(req.retrieval);
            let result = policy.run_episode(&mut env, &book, &mut teacher, &mut observer);
            session.finish(result);
        })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(reply(StatusCode::CREATED, json!({"id": id, "task": req.task})))
}

async fn list_episodes(State(st): State<Shared>) -> Response {
    let sessions: Vec<Arc<Session>> = st.sessions.lock().expect("session table poisoned").values().cloned().collect();
    let list: Vec<Value> = sessions
        .iter()
        .map(|s| {
            let live = s.lock();
            json!({"id": s.id, "task": s.task, "status": live.status, "outcome": live.outcome})
        })
        .collect();
    reply(StatusCode::OK, json!({"episodes": list}))
}

async fn episode_state(State(st): State<Shared>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let s = st.session(id)?;
    let live = s.lock();
    let awaiting = match live.status {
        Status::AwaitingFeedback => Some("feedback"),
        Status::AwaitingReview => Some("review"),
        _ => None,
    };
    let subtask = live.subtask.as_ref().map(|(i, d)| json!({"index": i, "description": d, "attempt": live.attempt}));
    Ok(reply(
        StatusCode::OK,
        json!({
            "id": s.id,
            "task": s.task,
            "teacher": s.teacher,
            "retrieval": s.retrieval,
            "status": live.status,
            "world": live.world,
            "current_subtask": subtask,
            "last_program": live.last_program,
            "awaiting_feedback": awaiting.is_some(),
            "awaiting": awaiting,
            "interrupt_pending": live.interrupt,
            "outcome": live.outcome,
            "feedback_count": live.feedback_count,
            "last_retrieval_generation": live.retrieval_generation,
            "generation": st.book.generation(),
            "events": live.history.len(),
            "result": live.result,
        }),
    ))
}

async fn interrupt(State(st): State<Shared>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let s = st.session(id)?;
    let mut live = s.lock();
    if live.status == Status::Finished {
        return Err(ApiError::new(StatusCode::CONFLICT, "episode already finished"));
    }
    if !live.interrupt {
        live.interrupt = true;
        s.publish(&mut live, json!({"type": "interrupt_requested"}));
    }
    Ok(reply(StatusCode::ACCEPTED, json!({"id": id, "interrupt_pending": true})))
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    text: String,
}

/// Hands the text to the episode's teacher, then waits until the policy
/// has paraphrased and stored it.
async fn feedback(
    State(st): State<Shared>,
    Path(id): Path<u64>,
    Json(body): Json<FeedbackBody>,
) -> Result<Response, ApiError> {
    let s = st.session(id)?;
    let text = body.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "feedback text is empty"));
    }
    let mut rx = {
        let mut live = s.lock();
        if !matches!(live.status, Status::AwaitingFeedback | Status::AwaitingReview) {
            return Err(ApiError::new(StatusCode::CONFLICT, "robot is not awaiting feedback"));
        }
        let rx = s.tx.subscribe();
        live.inbox = Some(Input::Feedback(text));
        s.wake.notify_all();
        rx
    };
    let wait = async {
        loop {
            match rx.recv().await {
                Ok(env) if env.kind == "feedback" || env.kind == "finished" => return Some(env),
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    };
    let env = tokio::time::timeout(Duration::from_secs(120), wait).await.ok().flatten();
    let log = env
        .filter(|e| e.kind == "feedback")
        .and_then(|e| serde_json::from_str::<Value>(&e.body).ok())
        .map(|v| v["log"].clone());
    let Some(log) = log else {
        return Ok(reply(StatusCode::ACCEPTED, json!({"id": id, "feedback": null, "entries": []})));
    };
    let snap = st.book.snapshot();
    let entries: Vec<EntryView> = log["entry_ids"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|v| v.as_u64())
        .filter_map(|eid| snap.get(eid).map(|e| EntryView::new(e, None)))
        .collect();
    Ok(reply(StatusCode::OK, json!({"id": id, "feedback": log, "entries": entries})))
}

#[derive(Debug, Deserialize)]
struct VerdictBody {
    subtask_ok: bool,
}

async fn verdict(
    State(st): State<Shared>,
    Path(id): Path<u64>,
    Json(body): Json<VerdictBody>,
) -> Result<Response, ApiError> {
    let s = st.session(id)?;
    let mut live = s.lock();
    if live.status != Status::AwaitingReview {
        return Err(ApiError::new(StatusCode::CONFLICT, "robot is not awaiting a verdict"));
    }
    live.inbox = Some(Input::Verdict(body.subtask_ok));
    s.wake.notify_all();
    Ok(reply(StatusCode::ACCEPTED, json!({"id": id, "subtask_ok": body.subtask_ok})))
}

/// Replays the episode so far, then follows it live until it finishes.
async fn events(
    State(st): State<Shared>,
    Path(id): Path<u64>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let s = st.session(id)?;
    let (history, rx) = {
        let live = s.lock();
        (live.history.clone(), s.tx.subscribe())
    };
    let done = history.last().is_some_and(|e| e.kind == "finished");
    let guard = Subscriber::new(s);
    let live = stream::unfold((rx, guard, done), |(mut rx, guard, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(env) => {
                    let done = env.kind == "finished";
                    return Some((env, (rx, guard, done)));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagged");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let all = stream::iter(history)
        .chain(live)
        .map(|env| Ok(Event::default().event(env.kind.clone()).id(env.seq.to_string()).data(env.body.as_str())));
    let interval = (st.opts.heartbeat / 2).clamp(Duration::from_millis(50), Duration::from_secs(15));
    Ok(Sse::new(all).keep_alive(KeepAlive::new().interval(interval)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    AwaitingFeedback,
    AwaitingReview,
    Finished,
}

enum Input {
    Feedback(String),
    Verdict(bool),
}

/// One serialized event: `{schema_version, episode, seq, type, ...}`.
#[derive(Debug, Clone)]
struct Envelope {
    seq: u64,
    kind: String,
    body: Arc<String>,
}

struct Live {
    status: Status,
    world: World,
    subtask: Option<(usize, String)>,
    attempt: u32,
    last_program: Option<String>,
    outcome: Option<Outcome>,
    feedback_count: u32,
    retrieval_generation: Option<u64>,
    interrupt: bool,
    inbox: Option<Input>,
    /// Last request from the console for this episode.
    last_seen: Instant,
    history: Vec<Envelope>,
    result: Option<EpisodeResult>,
}

pub struct Session {
    id: u64,
    task: String,
    teacher: TeacherMode,
    retrieval: bool,
    live: Mutex<Live>,
    wake: Condvar,
    tx: broadcast::Sender<Envelope>,
    subscribers: AtomicUsize,
}

impl Session {
    fn new(id: u64, task: String, teacher: TeacherMode, retrieval: bool, world: World) -> Self {
        Session {
            id,
            task,
            teacher,
            retrieval,
            live: Mutex::new(Live {
                status: Status::Running,
                world,
                subtask: None,
                attempt: 0,
                last_program: None,
                outcome: None,
                feedback_count: 0,
                retrieval_generation: None,
                interrupt: false,
                inbox: None,
                last_seen: Instant::now(),
                history: Vec::new(),
                result: None,
            }),
            wake: Condvar::new(),
            tx: broadcast::channel(4096).0,
            subscribers: AtomicUsize::new(0),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Live> {
        self.live.lock().expect("episode state poisoned")
    }

    fn touch(&self) {
        self.lock().last_seen = Instant::now();
        self.wake.notify_all();
    }

    /// Appends to the history and broadcasts; the caller holds the lock, so
    /// a subscriber taking history and receiver together sees no gap.
    fn publish(&self, live: &mut Live, mut body: Value) {
        let seq = live.history.len() as u64;
        let kind = body["type"].as_str().unwrap_or("event").to_string();
        body["schema_version"] = json!(SCHEMA_VERSION);
        body["episode"] = json!(self.id);
        body["seq"] = json!(seq);
        let env = Envelope { seq, kind, body: Arc::new(body.to_string()) };
        live.history.push(env.clone());
        let _ = self.tx.send(env);
    }

    fn observe(&self, e: &EpisodeEvent) {
        let mut live = self.lock();
        match e {
            EpisodeEvent::AttemptStarted { subtask, attempt, description } => {
                live.subtask = Some((*subtask, description.clone()));
                live.attempt = *attempt;
            }
            EpisodeEvent::Retrieval { log, .. } => live.retrieval_generation = Some(log.generation),
            EpisodeEvent::Program { text, .. } => live.last_program = Some(text.clone()),
            EpisodeEvent::Step { world, .. } | EpisodeEvent::Reset { world, .. } => live.world = world.clone(),
            EpisodeEvent::Feedback { .. } => live.feedback_count += 1,
            EpisodeEvent::Finished { outcome, feedback_count } => {
                live.outcome = Some(*outcome);
                live.feedback_count = *feedback_count;
                live.status = Status::Finished;
                live.interrupt = false;
            }
            _ => {}
        }
        let body = serde_json::to_value(e).expect("events serialize");
        self.publish(&mut live, body);
    }

    fn finish(&self, result: EpisodeResult) {
        let mut live = self.lock();
        live.status = Status::Finished;
        live.result = Some(result);
    }

    fn take_interrupt(&self) -> bool {
        std::mem::take(&mut self.lock().interrupt)
    }

    fn console_connected(&self, live: &Live, heartbeat: Duration) -> bool {
        self.subscribers.load(Ordering::SeqCst) > 0 || live.last_seen.elapsed() < heartbeat
    }

    /// Blocks the episode in `status` until the console answers; `None`
    /// once the console has been silent for a full heartbeat.
    fn wait_for_input(&self, status: Status, heartbeat: Duration) -> Option<Input> {
        let mut live = self.lock();
        live.inbox = None;
        if !self.console_connected(&live, heartbeat) {
            return None;
        }
        live.status = status;
        let reason = if status == Status::AwaitingReview { "review" } else { "feedback" };
        self.publish(&mut live, json!({"type": "awaiting", "reason": reason}));
        loop {
            if let Some(input) = live.inbox.take() {
                live.status = Status::Running;
                live.interrupt = false;
                self.publish(&mut live, json!({"type": "resumed", "autonomous": false}));
                return Some(input);
            }
            if !self.console_connected(&live, heartbeat) {
                live.status = Status::Running;
                self.publish(&mut live, json!({"type": "resumed", "autonomous": true}));
                return None;
            }
            let wait = heartbeat.saturating_sub(live.last_seen.elapsed()).max(Duration::from_millis(10));
            live = self.wake.wait_timeout(live, wait).expect("episode state poisoned").0;
        }
    }
}

/// Counts an open event stream; the console counts as present while one is
/// open, and its heartbeat restarts when the last one closes.
struct Subscriber(Arc<Session>);

impl Subscriber {
    fn new(s: Arc<Session>) -> Self {
        s.subscribers.fetch_add(1, Ordering::SeqCst);
        Subscriber(s)
    }
}

impl Drop for Subscriber {
    fn drop(&mut self) {
        self.0.subscribers.fetch_sub(1, Ordering::SeqCst);
        self.0.touch();
    }
}

struct ConsoleTeacher {
    session: Arc<Session>,
    fallback: Box<dyn Teacher + Send>,
    wait_at_review: bool,
    heartbeat: Duration,
}

impl Teacher for ConsoleTeacher {
    fn after_step(&mut self, v: &StepView<'_>) -> Option<String> {
        if self.session.take_interrupt() {
            match self.session.wait_for_input(Status::AwaitingFeedback, self.heartbeat) {
                Some(Input::Feedback(text)) => return Some(text),
                // A verdict cannot arrive here: the endpoint requires a review.
                Some(Input::Verdict(_)) | None => {}
            }
        }
        self.fallback.after_step(v)
    }

    fn review(&mut self, v: &ReviewView<'_>) -> Review {
        if self.wait_at_review {
            match self.session.wait_for_input(Status::AwaitingReview, self.heartbeat) {
                Some(Input::Feedback(text)) => return Review { verdict: None, feedback: Some(text) },
                Some(Input::Verdict(ok)) => return Review { verdict: Some(ok), feedback: None },
                None => {}
            }
        }
        self.fallback.review(v)
    }
}
