use std::path::Path;

use serde::{Deserialize, Serialize};

use super::predicate::Predicate;
use super::teacher::{TeacherScript, Trigger};
use super::world::World;
use super::SimError;
use crate::dsl::{parse, validate, SkillProgram, SkillRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Long-horizon.
    LH,
    /// Contact-rich.
    CR,
    /// Semantic reasoning.
    SR,
    /// Coordinated translation and rotation.
    TR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    HeldOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub name: String,
    pub action: String,
    pub objects: Vec<String>,
    pub goal: Predicate,
    /// A program that reaches `goal` from the state left by the previous
    /// subtasks' reference programs.
    pub program: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub category: Category,
    pub split: Split,
    pub goal: Predicate,
    pub world: World,
    pub subtasks: Vec<SubtaskSpec>,
    #[serde(default)]
    pub teacher: Vec<Trigger>,
}

impl TaskSpec {
    /// Parses a task file and checks it: world structure, goal false at
    /// reset, predicate labels present, reference programs valid.
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let mut spec: TaskSpec = toml::from_str(text).map_err(|e| SimError::Task(e.to_string()))?;
        spec.world = spec.world.finalize().map_err(|e| SimError::Task(format!("{}: {e}", spec.name)))?;
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Task(format!("{}: {m}", self.name)));
        if self.subtasks.is_empty() {
            return err("needs at least one subtask".into());
        }
        if self.goal.eval(&self.world) {
            return err("goal already holds in the initial world".into());
        }
        let known = |l: &str| l == "table" || self.world.body(l).is_some() || self.world.joint(l).is_some();
        let registry = SkillRegistry::standard();
        let mut names = std::collections::BTreeSet::new();
        for s in &self.subtasks {
            if !names.insert(s.name.as_str()) {
                return err(format!("duplicate subtask `{}`", s.name));
            }
            if s.action.trim().is_empty() {
                return err(format!("subtask `{}` has no action", s.name));
            }
            for l in s.goal.labels().into_iter().chain(s.objects.iter().map(String::as_str)) {
                if !known(l) {
                    return err(format!("subtask `{}` names unknown object `{l}`", s.name));
                }
            }
            let p = parse(&s.program).map_err(|e| SimError::Task(format!("{}: `{}`: {e}", self.name, s.name)))?;
            if let Err(errs) = validate(&p, &registry) {
                return err(format!("subtask `{}`: {}", s.name, errs[0]));
            }
        }
        for l in self.goal.labels() {
            if !known(l) {
                return err(format!("goal names unknown object `{l}`"));
            }
        }
        for t in &self.teacher {
            if t.subtask.is_some_and(|i| i >= self.subtasks.len()) {
                return err(format!("teacher trigger `{}` targets a missing subtask", t.on));
            }
        }
        Ok(())
    }

    pub fn subtask(&self, name: &str) -> Option<&SubtaskSpec> {
        self.subtasks.iter().find(|s| s.name == name)
    }

    pub fn teacher_script(&self) -> TeacherScript {
        TeacherScript { triggers: self.teacher.clone() }
    }

    /// The reference programs of all subtasks, in order.
    pub fn reference_programs(&self) -> Vec<SkillProgram> {
        self.subtasks.iter().map(|s| parse(&s.program).expect("checked at load")).collect()
    }
}

/// Normalized task lookup key: lowercase, single-spaced.
pub fn task_key(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// All task specs of a directory, sorted by name.
#[derive(Debug, Clone, Default)]
pub struct TaskSuite {
    tasks: Vec<TaskSpec>,
}

impl TaskSuite {
    pub fn new(mut tasks: Vec<TaskSpec>) -> Self {
        tasks.sort_by(|a, b| a.name.cmp(&b.name));
        TaskSuite { tasks }
    }

    pub fn load_dir(dir: &Path) -> Result<Self, SimError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| SimError::Task(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut tasks = Vec::new();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| SimError::Task(format!("{}: {e}", p.display())))?;
            let spec = TaskSpec::from_toml(&text).map_err(|e| SimError::Task(format!("{}: {e}", p.display())))?;
            if tasks.iter().any(|t: &TaskSpec| task_key(&t.name) == task_key(&spec.name)) {
                return Err(SimError::Task(format!("duplicate task `{}`", spec.name)));
            }
            tasks.push(spec);
        }
        Ok(TaskSuite::new(tasks))
    }

    pub fn get(&self, name: &str) -> Option<&TaskSpec> {
        let k = task_key(name);
        self.tasks.iter().find(|t| task_key(&t.name) == k)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(move |t| t.split == split)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}
