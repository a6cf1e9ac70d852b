//! The skillbook-conditioned policy: task decomposition, retrieval,
//! program generation and the episode loop that learns from corrections.

mod episode;
mod teacher;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use episode::{
    AttemptLog, EpisodeEvent, EpisodeResult, FeedbackLog, NullObserver, Observer, Outcome, RetrievalLog, SubtaskLog,
};
pub use teacher::{NoTeacher, RecordingTeacher, ReplayTeacher, Review, ReviewView, StepView, Teacher, TeacherDecision};

use crate::config::Config;
use crate::dsl::{parse, validate, SkillProgram, SkillRegistry, Template};
use crate::embedding::{embed_key, EmbedError, Embedder};
use crate::model::{Fixture, LanguageModel, Message, ModelRequest, Role};
use crate::prompts::{bullets, fill, json_body, Prompts};
use crate::scene::SceneGraph;
use crate::simenv::TaskSuite;
use crate::skillbook::{BookState, EntryId, Payload, RetrievalQuery, RetrievalResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    pub description: String,
    pub action_label: String,
    pub object_labels: Vec<String>,
}

impl Subtask {
    /// Labels that name neither a scene node nor the table.
    pub fn unresolved(&self, scene: &SceneGraph) -> Vec<String> {
        self.object_labels.iter().filter(|l| *l != "table" && !scene.has_label(l)).cloned().collect()
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("decomposition failed: {0}")]
    Decompose(String),
    #[error("program generation failed: {0}")]
    Generate(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// The fixed, task-invariant system prompt and the skills it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub system_prompt: String,
    pub registry: SkillRegistry,
}

impl Prior {
    pub fn new(prompts: &Prompts, registry: SkillRegistry) -> Self {
        let skills = registry
            .iter()
            .map(|s| format!("  {}: {}", s.signature_text(), s.description))
            .collect::<Vec<_>>()
            .join("\n");
        Prior { system_prompt: fill(&prompts.prior, &[("skills", &skills)]), registry }
    }
}

/// Retrieved entries, split by role, in the order they are shown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Context {
    pub globals: Vec<String>,
    pub guidance: Vec<String>,
    pub templates: Vec<(EntryId, Template)>,
}

impl Context {
    pub fn from_retrieval(snapshot: &BookState, result: &RetrievalResult) -> Self {
        let mut c = Context::default();
        for id in &result.globals {
            if let Some(t) = snapshot.get(*id).and_then(|e| e.payload.text()) {
                c.globals.push(t.to_string());
            }
        }
        for s in &result.ranked {
            match snapshot.get(s.id).map(|e| &e.payload) {
                Some(Payload::Template { template }) => c.templates.push((s.id, template.clone())),
                Some(p) => c.guidance.extend(p.text().map(str::to_string)),
                None => {}
            }
        }
        c
    }
}

/// A validated program plus how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub program: SkillProgram,
    /// The model's final reply, verbatim.
    pub reply: String,
    pub repairs: u32,
    /// Templates invoked by name, in call order.
    pub template_calls: Vec<String>,
}

#[derive(Deserialize)]
struct SubtaskReply {
    #[serde(default)]
    description: String,
    action: String,
    #[serde(default)]
    objects: Vec<String>,
}

/// Everything the policy needs besides the world and the skillbook.
pub struct Policy<'a> {
    pub model: &'a dyn LanguageModel,
    pub embedder: &'a dyn Embedder,
    pub prompts: &'a Prompts,
    pub prior: Prior,
    pub config: Config,
    /// `false` skips every skillbook read and write.
    pub retrieval: bool,
}

impl<'a> Policy<'a> {
    pub fn new(model: &'a dyn LanguageModel, embedder: &'a dyn Embedder, prompts: &'a Prompts, config: Config) -> Self {
        Policy {
            model,
            embedder,
            prompts,
            prior: Prior::new(prompts, SkillRegistry::standard()),
            config,
            retrieval: true,
        }
    }

    pub fn without_retrieval(mut self) -> Self {
        self.retrieval = false;
        self
    }

    /// Asks the model for an ordered subtask list. Invalid lists get the
    /// configured number of retries with the problems spelled out.
    pub fn decompose(&self, task: &str, scene: &SceneGraph) -> Result<Vec<Subtask>, PolicyError> {
        let first = fill(&self.prompts.decompose, &[("scene", &scene.render()), ("task", task)]);
        let mut messages = vec![Message::system(self.prior.system_prompt.clone()), Message::user(first)];
        let mut problems = Vec::new();
        for attempt in 0..=self.config.limits.decompose_retries {
            let req = ModelRequest::new(Role::Decompose, messages.clone(), self.config.budgets.decompose);
            let reply = self.model.complete(&req).map_err(|e| PolicyError::Decompose(format!("model: {e}")))?.text;
            match check_subtasks(&reply, scene) {
                Ok(s) => return Ok(s),
                Err(why) => {
                    problems.push(format!("attempt {}: {why}", attempt + 1));
                    messages.push(Message::assistant(reply));
                    messages
                        .push(Message::user(fill(&self.prompts.decompose_retry, &[("errors", &why), ("task", task)])));
                }
            }
        }
        Err(PolicyError::Decompose(problems.join("; ")))
    }

    /// Query for a subtask. The scene term is filled only when it carries
    /// weight.
    pub fn build_query(&self, subtask: &Subtask, scene: &SceneGraph) -> Result<RetrievalQuery, PolicyError> {
        let scene = (self.config.retrieval.lambda_scene > 0.0).then_some(scene);
        let key = embed_key(self.embedder, &subtask.action_label, &subtask.object_labels, scene)?;
        Ok(RetrievalQuery::from_key(&key))
    }

    /// The generation request: prior as system message, then the task,
    /// scene, global guidance, ranked guidance and template sources.
    pub fn generation_messages(
        &self,
        task: &str,
        subtask: &Subtask,
        scene: &SceneGraph,
        ctx: &Context,
    ) -> Vec<Message> {
        let templates = if ctx.templates.is_empty() {
            "(none)".to_string()
        } else {
            ctx.templates.iter().map(|(_, t)| t.render_source()).collect::<Vec<_>>().join("\n\n")
        };
        let user = fill(
            &self.prompts.generate,
            &[
                ("task", task),
                ("subtask", &subtask.description),
                ("action", &subtask.action_label),
                ("objects", &subtask.object_labels.join(", ")),
                ("scene", &scene.render()),
                ("globals", &bullets(ctx.globals.iter().cloned())),
                ("guidance", &bullets(ctx.guidance.iter().cloned())),
                ("templates", &templates),
            ],
        );
        vec![Message::system(self.prior.system_prompt.clone()), Message::user(user)]
    }

    /// Generates a program, expanding calls to retrieved templates, with up
    /// to `repair_rounds` repair requests for unparseable or invalid output.
    pub fn generate_program(
        &self,
        task: &str,
        subtask: &Subtask,
        scene: &SceneGraph,
        ctx: &Context,
    ) -> Result<Generated, PolicyError> {
        let mut messages = self.generation_messages(task, subtask, scene, ctx);
        let mut diagnostics = Vec::new();
        for round in 0..=self.config.limits.repair_rounds {
            let req = ModelRequest::new(Role::Generate, messages.clone(), self.config.budgets.generate);
            let reply = self.model.complete(&req).map_err(|e| PolicyError::Generate(format!("model: {e}")))?.text;
            match self.check_program(&reply, scene, ctx) {
                Ok((program, template_calls)) => {
                    return Ok(Generated { program, reply, repairs: round, template_calls });
                }
                Err(errors) => {
                    diagnostics.push(format!("round {}: {}", round + 1, errors.join("; ")));
                    messages.push(Message::assistant(reply));
                    messages.push(Message::user(fill(
                        &self.prompts.repair,
                        &[("errors", &bullets(errors)), ("subtask", &subtask.description)],
                    )));
                }
            }
        }
        Err(PolicyError::Generate(diagnostics.join("; ")))
    }

    fn check_program(
        &self,
        reply: &str,
        scene: &SceneGraph,
        ctx: &Context,
    ) -> Result<(SkillProgram, Vec<String>), Vec<String>> {
        let text = strip_fences(reply);
        let parsed = parse(text).map_err(|e| vec![e.to_string()])?;
        let mut calls = Vec::new();
        let mut used = Vec::new();
        let mut errors = Vec::new();
        for (i, call) in parsed.calls.into_iter().enumerate() {
            if self.prior.registry.contains(&call.skill) {
                calls.push(call);
                continue;
            }
            match ctx.templates.iter().find(|(_, t)| t.name == call.skill) {
                Some((_, t)) => match t.invoke(&call.args, scene) {
                    Ok(p) => {
                        used.push(t.name.clone());
                        calls.extend(p.calls);
                    }
                    Err(e) => errors.push(format!("call {}: {e}", i + 1)),
                },
                None => calls.push(call),
            }
        }
        let program = SkillProgram::new(calls);
        if program.is_empty() {
            errors.push("the program is empty".into());
        }
        if let Err(es) = validate(&program, &self.prior.registry) {
            errors.extend(es.iter().map(ToString::to_string));
        }
        if errors.is_empty() {
            Ok((program, used))
        } else {
            Err(errors)
        }
    }
}

fn check_subtasks(reply: &str, scene: &SceneGraph) -> Result<Vec<Subtask>, String> {
    let body = json_body(reply).ok_or("no JSON list in the reply")?;
    let raw: Vec<SubtaskReply> = serde_json::from_str(body).map_err(|e| format!("malformed JSON: {e}"))?;
    if raw.is_empty() {
        return Err("the subtask list is empty".into());
    }
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, r) in raw.into_iter().enumerate() {
        let action_label = r.action.trim().to_string();
        if action_label.is_empty() {
            problems.push(format!("subtask {} has no action", i + 1));
        }
        let s = Subtask {
            description: if r.description.trim().is_empty() {
                action_label.clone()
            } else {
                r.description.trim().to_string()
            },
            action_label,
            object_labels: r.objects.iter().map(|o| o.trim().to_string()).collect(),
        };
        for l in s.unresolved(scene) {
            problems.push(format!("subtask {} names \"{l}\", which is not in the scene", i + 1));
        }
        out.push(s);
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(problems.join("; "))
    }
}

/// Drops a surrounding Markdown code fence, if any.
fn strip_fences(reply: &str) -> &str {
    let t = reply.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Name for a template learned on a subtask: the action followed by the
/// class of its first object, e.g. `open_door`.
pub fn template_name(subtask: &Subtask, scene: &SceneGraph) -> String {
    let class = subtask.object_labels.first().and_then(|l| scene.node(l)).map(|n| n.class.as_str());
    let raw = match class {
        Some(c) => format!("{}_{}", subtask.action_label, c),
        None => subtask.action_label.clone(),
    };
    crate::dsl::sanitize_identifier(&raw)
}

/// Lowest-priority fixtures that reproduce each task's reference solution:
/// a decomposition keyed by task name and one program per subtask, keyed by
/// subtask name and tied to the task through `requires`.
pub fn reference_fixtures(suite: &TaskSuite) -> Vec<Fixture> {
    let mut out = Vec::new();
    for t in suite.iter() {
        let list: Vec<serde_json::Value> = t
            .subtasks
            .iter()
            .map(|s| serde_json::json!({"description": s.name, "action": s.action, "objects": s.objects}))
            .collect();
        out.push(Fixture {
            role: Role::Decompose,
            key: t.name.clone(),
            requires: Vec::new(),
            forbids: Vec::new(),
            response: serde_json::to_string(&list).expect("json"),
        });
        for s in &t.subtasks {
            out.push(Fixture {
                role: Role::Generate,
                key: s.name.clone(),
                requires: vec![format!("\nTASK: {}\n", t.name)],
                forbids: Vec::new(),
                response: s.program.trim().to_string(),
            });
        }
    }
    out
}

/// Fixture files in `dir` followed by the reference fixtures of `suite`.
pub fn scripted_model(dir: &std::path::Path, suite: &TaskSuite) -> Result<crate::model::ScriptedModel, String> {
    let mut model = crate::model::ScriptedModel::from_dir(dir)?;
    for f in reference_fixtures(suite) {
        model.push(f);
    }
    Ok(model)
}
