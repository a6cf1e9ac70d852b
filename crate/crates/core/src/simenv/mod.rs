//! Deterministic tabletop simulator, task suite and scripted teacher.

mod predicate;
mod task;
mod teacher;
mod world;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use predicate::Predicate;
pub use task::{task_key, Category, Split, SubtaskSpec, TaskSpec, TaskSuite};
pub use teacher::{Condition, Observation, ScriptedTeacher, TeacherScript, TraceEvent, Trigger};
pub use world::{
    Body, Facts, Gripper, Joint, JointKind, StepOutcome, ViolationKind, World, CONTACT_TOLERANCE, GRASP_TOLERANCE,
    POUR_TILT, WIPE_STROKE,
};

use crate::dsl::SkillCall;
use crate::scene::SceneGraph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown checkpoint {0}")]
    UnknownCheckpoint(u64),
    #[error("unknown subtask `{0}`")]
    UnknownSubtask(String),
    #[error("task spec: {0}")]
    Task(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CheckpointId(pub u64);

/// A running task: the world plus checkpoints and the call trace.
#[derive(Debug, Clone)]
pub struct SimEnv {
    spec: Arc<TaskSpec>,
    world: World,
    checkpoints: BTreeMap<u64, World>,
    next_checkpoint: u64,
    trace: Vec<TraceEvent>,
}

impl SimEnv {
    pub fn new(spec: Arc<TaskSpec>) -> Self {
        let world = spec.world.clone();
        SimEnv { spec, world, checkpoints: BTreeMap::new(), next_checkpoint: 0, trace: Vec::new() }
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    /// Back to the task's initial world. Earlier checkpoints become stale.
    pub fn reset(&mut self) -> &World {
        self.world = self.spec.world.clone();
        self.checkpoints.clear();
        self.trace.clear();
        &self.world
    }

    pub fn checkpoint(&mut self) -> CheckpointId {
        let id = self.next_checkpoint;
        self.next_checkpoint += 1;
        self.checkpoints.insert(id, self.world.clone());
        CheckpointId(id)
    }

    pub fn restore(&mut self, id: CheckpointId) -> Result<&World, SimError> {
        let w = self.checkpoints.get(&id.0).ok_or(SimError::UnknownCheckpoint(id.0))?;
        self.world = w.clone();
        Ok(&self.world)
    }

    pub fn step_skill(&mut self, call: &SkillCall) -> StepOutcome {
        let outcome = self.world.step(call);
        self.trace.push(TraceEvent { index: self.trace.len(), call: call.clone(), outcome: outcome.clone() });
        outcome
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn clear_trace(&mut self) {
        self.trace.clear();
    }

    pub fn scene_graph(&self) -> SceneGraph {
        self.world.scene_graph()
    }

    pub fn check_success(&self) -> bool {
        self.spec.goal.eval(&self.world)
    }

    pub fn check_subtask(&self, name: &str) -> Result<bool, SimError> {
        let s = self.spec.subtask(name).ok_or_else(|| SimError::UnknownSubtask(name.to_string()))?;
        Ok(s.goal.eval(&self.world))
    }
}
