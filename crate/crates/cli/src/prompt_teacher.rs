//! A teacher that asks a person at the terminal after every program.

use std::io::{BufRead, Write};

use memo_core::policy::{Review, ReviewView, StepView, Teacher};

/// Reads one line per review: empty accepts the automatic check, `y` or `n`
/// overrides it, anything else is a correction. End of input accepts.
pub struct PromptTeacher<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> PromptTeacher<R, W> {
    pub fn new(input: R, output: W) -> Self {
        PromptTeacher { input, output }
    }
}

impl<R: BufRead, W: Write> Teacher for PromptTeacher<R, W> {
    fn after_step(&mut self, _: &StepView<'_>) -> Option<String> {
        None
    }

    fn review(&mut self, v: &ReviewView<'_>) -> Review {
        let _ = writeln!(self.output, "subtask {}: {}", v.subtask_index + 1, v.subtask.description);
        for e in v.trace {
            let _ = writeln!(self.output, "  {}", e.call);
        }
        let verdict = if v.goal_met { "looks done" } else { "looks unfinished" };
        let _ = write!(self.output, "{verdict}; [enter] accept, y/n verdict, or type a correction: ");
        let _ = self.output.flush();
        let mut line = String::new();
        if self.input.read_line(&mut line).unwrap_or(0) == 0 {
            return Review::default();
        }
        match line.trim() {
            "" => Review::default(),
            "y" | "yes" => Review { verdict: Some(true), feedback: None },
            "n" | "no" => Review { verdict: Some(false), feedback: None },
            text => Review { verdict: None, feedback: Some(text.to_string()) },
        }
    }
}
