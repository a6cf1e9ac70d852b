use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Subtask;
use crate::simenv::{Observation, ScriptedTeacher, TraceEvent, World};

/// What the teacher sees right after a skill call.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub subtask_index: usize,
    pub subtask: &'a Subtask,
    pub event: &'a TraceEvent,
    pub world: &'a World,
}

/// What the teacher sees once the program stopped.
#[derive(Debug, Clone, Copy)]
pub struct ReviewView<'a> {
    pub subtask_index: usize,
    pub subtask: &'a Subtask,
    pub trace: &'a [TraceEvent],
    /// The automatic subtask check, before any verdict.
    pub goal_met: bool,
    pub world: &'a World,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    /// Overrides the automatic subtask check.
    pub verdict: Option<bool>,
    pub feedback: Option<String>,
}

/// Source of corrections during an episode.
pub trait Teacher {
    /// Feedback here interrupts the program.
    fn after_step(&mut self, view: &StepView<'_>) -> Option<String>;
    fn review(&mut self, view: &ReviewView<'_>) -> Review;
}

/// Never intervenes (zero-shot evaluation).
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTeacher;

impl Teacher for NoTeacher {
    fn after_step(&mut self, _: &StepView<'_>) -> Option<String> {
        None
    }

    fn review(&mut self, _: &ReviewView<'_>) -> Review {
        Review::default()
    }
}

impl Teacher for ScriptedTeacher {
    fn after_step(&mut self, v: &StepView<'_>) -> Option<String> {
        self.observe(Observation::Step { subtask: v.subtask_index, event: v.event })
    }

    fn review(&mut self, v: &ReviewView<'_>) -> Review {
        let feedback =
            self.observe(Observation::Review { subtask: v.subtask_index, trace: v.trace, goal_met: v.goal_met });
        Review { verdict: None, feedback }
    }
}

impl<T: Teacher + ?Sized> Teacher for Box<T> {
    fn after_step(&mut self, v: &StepView<'_>) -> Option<String> {
        (**self).after_step(v)
    }

    fn review(&mut self, v: &ReviewView<'_>) -> Review {
        (**self).review(v)
    }
}

/// One recorded teacher answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherDecision {
    Step { feedback: Option<String> },
    Review { review: Review },
}

/// Records every answer of an inner teacher.
#[derive(Debug, Clone)]
pub struct RecordingTeacher<T> {
    inner: T,
    pub decisions: Vec<TeacherDecision>,
}

impl<T: Teacher> RecordingTeacher<T> {
    pub fn new(inner: T) -> Self {
        RecordingTeacher { inner, decisions: Vec::new() }
    }
}

impl<T: Teacher> Teacher for RecordingTeacher<T> {
    fn after_step(&mut self, v: &StepView<'_>) -> Option<String> {
        let feedback = self.inner.after_step(v);
        self.decisions.push(TeacherDecision::Step { feedback: feedback.clone() });
        feedback
    }

    fn review(&mut self, v: &ReviewView<'_>) -> Review {
        let review = self.inner.review(v);
        self.decisions.push(TeacherDecision::Review { review: review.clone() });
        review
    }
}

/// Plays recorded answers back in order. A mismatched or missing answer
/// counts as no intervention and is logged.
#[derive(Debug, Clone)]
pub struct ReplayTeacher {
    decisions: VecDeque<TeacherDecision>,
}

impl ReplayTeacher {
    pub fn new(decisions: Vec<TeacherDecision>) -> Self {
        ReplayTeacher { decisions: decisions.into() }
    }

    pub fn remaining(&self) -> usize {
        self.decisions.len()
    }
}

impl Teacher for ReplayTeacher {
    fn after_step(&mut self, _: &StepView<'_>) -> Option<String> {
        match self.decisions.pop_front() {
            Some(TeacherDecision::Step { feedback }) => feedback,
            other => {
                tracing::warn!(?other, "teacher replay out of step");
                None
            }
        }
    }

    fn review(&mut self, _: &ReviewView<'_>) -> Review {
        match self.decisions.pop_front() {
            Some(TeacherDecision::Review { review }) => review,
            other => {
                tracing::warn!(?other, "teacher replay out of step");
                Review::default()
            }
        }
    }
}
