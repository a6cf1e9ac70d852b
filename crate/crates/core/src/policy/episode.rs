use serde::{Deserialize, Serialize};

use super::teacher::{Review, ReviewView, StepView, Teacher};
use super::{template_name, Context, Policy, Subtask};
use crate::config::Config;
use crate::dsl::templatize_named;
use crate::embedding::embed_key;
use crate::feedback::{ingest, parse_feedback, FeedbackContext};
use crate::scene::SceneGraph;
use crate::simenv::{SimEnv, StepOutcome, TraceEvent, World};
use crate::skillbook::{EntryId, NewEntry, Payload, Provenance, Scored, Skillbook, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    /// The task could not be decomposed.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLog {
    pub generation: u64,
    pub ranked: Vec<Scored>,
    pub globals: Vec<EntryId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLog {
    pub raw_text: String,
    pub local_text: String,
    pub general_text: Option<String>,
    pub fallback: bool,
    pub entry_ids: Vec<EntryId>,
    /// Skillbook generation after ingestion.
    pub generation: u64,
    /// Given mid-program rather than at review.
    pub interrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: u32,
    /// Absent when retrieval is disabled.
    pub retrieval: Option<RetrievalLog>,
    pub program: Option<String>,
    pub template_calls: Vec<String>,
    pub repairs: u32,
    pub generation_error: Option<String>,
    pub steps: Vec<TraceEvent>,
    pub goal_met: bool,
    pub verdict: Option<bool>,
    pub success: bool,
    pub feedback: Option<FeedbackLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskLog {
    pub index: usize,
    pub subtask: Subtask,
    pub attempts: Vec<AttemptLog>,
    pub success: bool,
    /// Template stored after success, unless it duplicated an entry.
    pub template_id: Option<EntryId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_name: String,
    pub outcome: Outcome,
    pub retrieval_enabled: bool,
    pub subtasks: Vec<Subtask>,
    pub subtask_log: Vec<SubtaskLog>,
    /// Number of teacher interventions, interruptions and reviews alike.
    pub feedback_count: u32,
    pub diagnostics: Vec<String>,
    pub config: Config,
}

impl EpisodeResult {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// Interventions recorded in the log; always equals `feedback_count`.
    pub fn logged_feedback(&self) -> usize {
        self.subtask_log.iter().flat_map(|s| &s.attempts).filter(|a| a.feedback.is_some()).count()
    }
}

/// Progress notifications, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EpisodeEvent {
    Decomposed {
        subtasks: Vec<Subtask>,
    },
    AttemptStarted {
        subtask: usize,
        attempt: u32,
        description: String,
    },
    Retrieval {
        subtask: usize,
        attempt: u32,
        log: RetrievalLog,
    },
    Program {
        subtask: usize,
        attempt: u32,
        text: String,
    },
    GenerationFailed {
        subtask: usize,
        attempt: u32,
        diagnostics: String,
    },
    Step {
        subtask: usize,
        attempt: u32,
        event: TraceEvent,
        world: World,
    },
    Feedback {
        subtask: usize,
        attempt: u32,
        log: FeedbackLog,
    },
    AttemptFinished {
        subtask: usize,
        attempt: u32,
        goal_met: bool,
        success: bool,
    },
    /// The subtask restarts from its start state, shown in `world`.
    Reset {
        subtask: usize,
        world: World,
    },
    TemplateStored {
        subtask: usize,
        entry_id: EntryId,
        name: String,
    },
    Finished {
        outcome: Outcome,
        feedback_count: u32,
    },
}

pub trait Observer {
    fn event(&mut self, event: &EpisodeEvent);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NullObserver;

impl Observer for NullObserver {
    fn event(&mut self, _: &EpisodeEvent) {}
}

impl<F: FnMut(&EpisodeEvent)> Observer for F {
    fn event(&mut self, event: &EpisodeEvent) {
        self(event)
    }
}

impl Policy<'_> {
    /// Runs the task in `env` (already reset). Each subtask is retried from
    /// its start state after every correction, up to the attempt limit;
    /// a subtask that fails without a correction ends the episode. Never
    /// panics or errors: every failure is an outcome with a log.
    pub fn run_episode(
        &self,
        env: &mut SimEnv,
        book: &Skillbook,
        teacher: &mut dyn Teacher,
        observer: &mut dyn Observer,
    ) -> EpisodeResult {
        let task = env.spec().name.clone();
        let mut result = EpisodeResult {
            task_name: task.clone(),
            outcome: Outcome::Failure,
            retrieval_enabled: self.retrieval,
            subtasks: Vec::new(),
            subtask_log: Vec::new(),
            feedback_count: 0,
            diagnostics: Vec::new(),
            config: self.config,
        };
        let subtasks = match self.decompose(&task, &env.scene_graph()) {
            Ok(s) => s,
            Err(e) => {
                result.outcome = Outcome::Aborted;
                result.diagnostics.push(e.to_string());
                observer.event(&EpisodeEvent::Finished { outcome: result.outcome, feedback_count: 0 });
                return result;
            }
        };
        result.subtasks = subtasks.clone();
        observer.event(&EpisodeEvent::Decomposed { subtasks: subtasks.clone() });
        let mut all_ok = true;
        for (i, subtask) in subtasks.iter().enumerate() {
            let log = self.run_subtask(&task, i, subtask, env, book, teacher, observer, &mut result);
            let ok = log.success;
            result.subtask_log.push(log);
            if !ok {
                all_ok = false;
                break;
            }
        }
        result.outcome = if all_ok && env.check_success() { Outcome::Success } else { Outcome::Failure };
        observer.event(&EpisodeEvent::Finished { outcome: result.outcome, feedback_count: result.feedback_count });
        result
    }

    #[allow(clippy::too_many_arguments)]
    fn run_subtask(
        &self,
        task: &str,
        index: usize,
        subtask: &Subtask,
        env: &mut SimEnv,
        book: &Skillbook,
        teacher: &mut dyn Teacher,
        observer: &mut dyn Observer,
        result: &mut EpisodeResult,
    ) -> SubtaskLog {
        let start = env.checkpoint();
        let start_scene = env.scene_graph();
        let mut log =
            SubtaskLog { index, subtask: subtask.clone(), attempts: Vec::new(), success: false, template_id: None };
        for attempt in 1..=self.config.limits.max_attempts {
            observer.event(&EpisodeEvent::AttemptStarted {
                subtask: index,
                attempt,
                description: subtask.description.clone(),
            });
            let mut a = AttemptLog {
                attempt,
                retrieval: None,
                program: None,
                template_calls: Vec::new(),
                repairs: 0,
                generation_error: None,
                steps: Vec::new(),
                goal_met: false,
                verdict: None,
                success: false,
                feedback: None,
            };
            let ctx = match self.retrieve(subtask, &start_scene, book) {
                Ok(Some((ctx, r))) => {
                    observer.event(&EpisodeEvent::Retrieval { subtask: index, attempt, log: r.clone() });
                    a.retrieval = Some(r);
                    ctx
                }
                Ok(None) => Context::default(),
                Err(e) => {
                    result.diagnostics.push(format!("subtask {}: retrieval: {e}", index + 1));
                    Context::default()
                }
            };
            let generated = match self.generate_program(task, subtask, &start_scene, &ctx) {
                Ok(g) => g,
                Err(e) => {
                    let d = e.to_string();
                    observer.event(&EpisodeEvent::GenerationFailed { subtask: index, attempt, diagnostics: d.clone() });
                    result.diagnostics.push(format!("subtask {}: {d}", index + 1));
                    a.generation_error = Some(d);
                    log.attempts.push(a);
                    return log;
                }
            };
            let text = generated.program.render();
            observer.event(&EpisodeEvent::Program { subtask: index, attempt, text: text.clone() });
            a.program = Some(text);
            a.template_calls = generated.template_calls.clone();
            a.repairs = generated.repairs;

            let may_teach = result.feedback_count < self.config.limits.max_feedback_per_attempt;
            env.clear_trace();
            let mut interruption = None;
            let mut violated = false;
            for call in &generated.program.calls {
                let outcome = env.step_skill(call);
                let event = env.trace().last().expect("step recorded").clone();
                observer.event(&EpisodeEvent::Step {
                    subtask: index,
                    attempt,
                    event: event.clone(),
                    world: env.world().clone(),
                });
                if may_teach {
                    let view = StepView { subtask_index: index, subtask, event: &event, world: env.world() };
                    interruption = teacher.after_step(&view);
                }
                if !matches!(outcome, StepOutcome::Ok) {
                    violated = true;
                }
                if violated || interruption.is_some() {
                    break;
                }
            }
            a.steps = env.trace().to_vec();
            a.goal_met = !violated && self.subtask_goal(env, index);
            let mut feedback = interruption.clone().map(|t| (t, true));
            if feedback.is_none() && may_teach {
                let view = ReviewView {
                    subtask_index: index,
                    subtask,
                    trace: env.trace(),
                    goal_met: a.goal_met,
                    world: env.world(),
                };
                let Review { verdict, feedback: f } = teacher.review(&view);
                a.verdict = verdict;
                feedback = f.map(|t| (t, false));
            }
            a.success = feedback.is_none() && a.verdict.unwrap_or(a.goal_met);
            observer.event(&EpisodeEvent::AttemptFinished {
                subtask: index,
                attempt,
                goal_met: a.goal_met,
                success: a.success,
            });

            if let Some((raw, interrupted)) = feedback {
                result.feedback_count += 1;
                let fl = self.take_feedback(
                    task,
                    subtask,
                    &start_scene,
                    &generated.program,
                    attempt,
                    &raw,
                    interrupted,
                    book,
                );
                observer.event(&EpisodeEvent::Feedback { subtask: index, attempt, log: fl.clone() });
                a.feedback = Some(fl);
                log.attempts.push(a);
                env.restore(start).expect("subtask checkpoint is live");
                observer.event(&EpisodeEvent::Reset { subtask: index, world: env.world().clone() });
                continue;
            }
            let success = a.success;
            log.attempts.push(a);
            if success {
                log.success = true;
                if self.retrieval {
                    log.template_id =
                        self.store_template(task, subtask, &start_scene, &generated.program, attempt, book);
                    if let Some(id) = log.template_id {
                        let name = template_name(subtask, &start_scene);
                        observer.event(&EpisodeEvent::TemplateStored { subtask: index, entry_id: id, name });
                    }
                }
            }
            return log;
        }
        log
    }

    fn subtask_goal(&self, env: &SimEnv, index: usize) -> bool {
        // Decomposed subtasks are checked against the task's subtask goals by
        // position; extra subtasks only need to run without a violation.
        env.spec().subtasks.get(index).is_none_or(|s| s.goal.eval(env.world()))
    }

    fn retrieve(
        &self,
        subtask: &Subtask,
        scene: &SceneGraph,
        book: &Skillbook,
    ) -> Result<Option<(Context, RetrievalLog)>, String> {
        if !self.retrieval {
            return Ok(None);
        }
        let query = self.build_query(subtask, scene).map_err(|e| e.to_string())?;
        let snapshot = book.snapshot();
        let r = snapshot.retrieve(&query, &self.config.retrieval).map_err(|e| e.to_string())?;
        let ctx = Context::from_retrieval(&snapshot, &r);
        Ok(Some((ctx, RetrievalLog { generation: r.generation, ranked: r.ranked, globals: r.globals })))
    }

    #[allow(clippy::too_many_arguments)]
    fn take_feedback(
        &self,
        task: &str,
        subtask: &Subtask,
        scene: &SceneGraph,
        program: &crate::dsl::SkillProgram,
        attempt: u32,
        raw: &str,
        interrupted: bool,
        book: &Skillbook,
    ) -> FeedbackLog {
        let ctx = FeedbackContext {
            task_name: task.to_string(),
            action_label: subtask.action_label.clone(),
            object_labels: subtask.object_labels.clone(),
            scene: scene.clone(),
            failed_program: Some(program.clone()),
            iteration: u64::from(attempt),
        };
        let mut fl = FeedbackLog {
            raw_text: raw.to_string(),
            local_text: raw.to_string(),
            general_text: None,
            fallback: true,
            entry_ids: Vec::new(),
            generation: book.generation(),
            interrupted,
        };
        if !self.retrieval {
            return fl;
        }
        match parse_feedback(raw, &ctx, self.model, self.prompts) {
            Ok(parsed) => {
                fl.local_text = parsed.local_text.clone();
                fl.general_text = parsed.general_text.clone();
                fl.fallback = parsed.fallback;
                match ingest(&parsed, &ctx, book, self.embedder) {
                    Ok(ids) => fl.entry_ids = ids,
                    Err(e) => tracing::warn!(error = %e, "feedback not stored"),
                }
            }
            Err(e) => tracing::warn!(error = %e, "feedback ignored"),
        }
        fl.generation = book.generation();
        fl
    }

    fn store_template(
        &self,
        task: &str,
        subtask: &Subtask,
        scene: &SceneGraph,
        program: &crate::dsl::SkillProgram,
        attempt: u32,
        book: &Skillbook,
    ) -> Option<EntryId> {
        let template = templatize_named(program, scene, &template_name(subtask, scene));
        let key = embed_key(self.embedder, &subtask.action_label, &subtask.object_labels, None).ok()?;
        let payload = Payload::Template { template };
        if book.snapshot().find_duplicate(&key, &payload).is_some() {
            return None;
        }
        let provenance = Provenance::new(task, Source::Success, u64::from(attempt));
        match book.insert(NewEntry::new(key, payload, provenance)) {
            Ok(id) => Some(id),
            Err(e) => {
                tracing::warn!(error = %e, "template not stored");
                None
            }
        }
    }
}
