#![allow(dead_code)]

pub mod oracle;
pub mod programs;

use std::sync::Arc;

use memo_core::config::Config;
use memo_core::embedding::{Embedder, HashingEmbedder};
use memo_core::model::{LanguageModel, ScriptedModel};
use memo_core::policy::{scripted_model, EpisodeResult, NoTeacher, NullObserver, Policy};
use memo_core::prompts::Prompts;
use memo_core::simenv::{ScriptedTeacher, SimEnv, TaskSuite};
use memo_core::skillbook::{Header, Skillbook};

/// The bundled task suite, fixtures and prompts with default settings.
pub struct Kit {
    pub suite: TaskSuite,
    pub model: ScriptedModel,
    pub embedder: HashingEmbedder,
    pub prompts: Prompts,
    pub config: Config,
}

impl Kit {
    pub fn new() -> Self {
        let suite = TaskSuite::load_dir(&memo_core::asset_dir().join("tasks")).unwrap();
        let model = scripted_model(&memo_core::asset_dir().join("fixtures"), &suite).unwrap();
        Kit {
            suite,
            model,
            embedder: HashingEmbedder::default(),
            prompts: Prompts::default(),
            config: Config::default(),
        }
    }

    pub fn book(&self) -> Skillbook {
        Skillbook::in_memory(self.header())
    }

    pub fn header(&self) -> Header {
        Header::new(self.embedder.id(), self.embedder.dimension())
    }

    pub fn policy<'a>(&'a self, model: &'a dyn LanguageModel, retrieval: bool) -> Policy<'a> {
        let p = Policy::new(model, &self.embedder, &self.prompts, self.config);
        if retrieval {
            p
        } else {
            p.without_retrieval()
        }
    }

    pub fn env(&self, task: &str) -> SimEnv {
        SimEnv::new(Arc::new(self.suite.get(task).unwrap_or_else(|| panic!("no task `{task}`")).clone()))
    }

    /// One episode with the task's scripted teacher (`teach`) or none.
    pub fn run_with(
        &self,
        model: &dyn LanguageModel,
        task: &str,
        book: &Skillbook,
        teach: bool,
        retrieval: bool,
    ) -> EpisodeResult {
        let mut env = self.env(task);
        let policy = self.policy(model, retrieval);
        if teach {
            let mut t = ScriptedTeacher::new(env.spec().teacher_script());
            policy.run_episode(&mut env, book, &mut t, &mut NullObserver)
        } else {
            policy.run_episode(&mut env, book, &mut NoTeacher, &mut NullObserver)
        }
    }

    pub fn run(&self, task: &str, book: &Skillbook, teach: bool, retrieval: bool) -> EpisodeResult {
        self.run_with(&self.model, task, book, teach, retrieval)
    }
}

/// Paraphrases and stores `text` as a correction on subtask `index` of `task`.
pub fn correct(
    kit: &Kit,
    book: &Skillbook,
    task: &str,
    index: usize,
    text: &str,
) -> Vec<memo_core::skillbook::EntryId> {
    use memo_core::feedback::{ingest, parse_feedback, FeedbackContext};
    let spec = kit.suite.get(task).unwrap();
    let s = &spec.subtasks[index];
    let ctx = FeedbackContext {
        task_name: spec.name.clone(),
        action_label: s.action.clone(),
        object_labels: s.objects.clone(),
        scene: spec.world.scene_graph(),
        failed_program: None,
        iteration: 0,
    };
    let parsed = parse_feedback(text, &ctx, &kit.model, &kit.prompts).unwrap();
    ingest(&parsed, &ctx, book, &kit.embedder).unwrap()
}
