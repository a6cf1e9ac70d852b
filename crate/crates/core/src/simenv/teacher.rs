use serde::{Deserialize, Serialize};

use super::world::{StepOutcome, ViolationKind};
use crate::dsl::SkillCall;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub index: usize,
    pub call: SkillCall,
    pub outcome: StepOutcome,
}

/// When a trigger fires. Written in task files as `violation:<kind>`,
/// `subtask_incomplete` or `called:<skill>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    Violation(ViolationKind),
    SubtaskIncomplete,
    Called(String),
}

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s == "subtask_incomplete" {
            return Some(Condition::SubtaskIncomplete);
        }
        if let Some(k) = s.strip_prefix("violation:") {
            return ViolationKind::parse(k.trim()).map(Condition::Violation);
        }
        s.strip_prefix("called:").map(|k| Condition::Called(k.trim().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub on: String,
    /// Restricts the trigger to one subtask index.
    #[serde(default)]
    pub subtask: Option<usize>,
    pub text: String,
    #[serde(default = "one")]
    pub max_fires: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherScript {
    pub triggers: Vec<Trigger>,
}

/// What the teacher is shown.
#[derive(Debug, Clone, Copy)]
pub enum Observation<'a> {
    /// Right after a skill call.
    Step { subtask: usize, event: &'a TraceEvent },
    /// After the program ran to completion or aborted.
    Review { subtask: usize, trace: &'a [TraceEvent], goal_met: bool },
}

/// Deterministic stand-in for a human: the first matching trigger that has
/// fires left produces its text.
#[derive(Debug, Clone)]
pub struct ScriptedTeacher {
    triggers: Vec<(Trigger, Option<Condition>)>,
    fired: Vec<u32>,
}

impl ScriptedTeacher {
    pub fn new(script: TeacherScript) -> Self {
        let fired = vec![0; script.triggers.len()];
        let triggers = script
            .triggers
            .into_iter()
            .map(|t| {
                let c = Condition::parse(&t.on);
                if c.is_none() {
                    tracing::warn!(trigger = %t.on, "unrecognized teacher trigger ignored");
                }
                (t, c)
            })
            .collect();
        ScriptedTeacher { triggers, fired }
    }

    pub fn observe(&mut self, obs: Observation<'_>) -> Option<String> {
        let subtask = match obs {
            Observation::Step { subtask, .. } | Observation::Review { subtask, .. } => subtask,
        };
        let hit = self.triggers.iter().enumerate().find(|(i, (t, c))| {
            let Some(c) = c else { return false };
            if self.fired[*i] >= t.max_fires || t.subtask.is_some_and(|s| s != subtask) {
                return false;
            }
            match obs {
                Observation::Step { event, .. } => step_matches(c, event),
                Observation::Review { trace, goal_met, .. } => match c {
                    Condition::SubtaskIncomplete => !goal_met && trace.iter().all(|e| e.outcome.is_ok()),
                    c => trace.iter().any(|e| step_matches(c, e)),
                },
            }
        });
        let (i, (t, _)) = hit?;
        let text = t.text.clone();
        self.fired[i] += 1;
        Some(text)
    }

    pub fn fires(&self) -> &[u32] {
        &self.fired
    }
}

fn step_matches(c: &Condition, e: &TraceEvent) -> bool {
    match c {
        Condition::Violation(k) => e.outcome.violation() == Some(*k),
        Condition::Called(skill) => &e.call.skill == skill,
        Condition::SubtaskIncomplete => false,
    }
}
