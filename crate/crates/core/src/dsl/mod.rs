//! The skill language: call sequences of parameterized skills.
//!
//! A program is a list of C-style calls separated by semicolons or newlines:
//!
//! ```text
//! move_to(pose(0.5,-0.3,0.2,0,0,0));
//! grasp(obj("door handle"));
//! rotate_joint(obj("door"), -1.2rad)
//! ```
//!
//! There is no control flow. Literals are numbers (optionally tagged `m` or
//! `rad`), `pose(x,y,z,roll,pitch,yaw)`, `obj("label")`, strings and booleans.
//! See `docs/grammar.md` for the full grammar.

mod parser;
mod registry;
mod template;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

pub use parser::{parse, ParseError};
pub use registry::{validate, ParamKind, SkillRegistry, SkillSignature, ValidationError, ValidationErrorKind};
pub use template::{
    instantiate, sanitize_identifier, templatize, templatize_named, Binding, InstantiateError, Template, TemplateArg,
    TemplateCall, TemplateParam, MATCH_TOLERANCE,
};

/// Unit tag carried by a numeric literal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    #[default]
    None,
    Meters,
    Radians,
}

impl Unit {
    fn suffix(self) -> &'static str {
        match self {
            Unit::None => "",
            Unit::Meters => "m",
            Unit::Radians => "rad",
        }
    }
}

/// A literal argument value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Value {
    Number {
        value: f64,
        #[serde(default)]
        unit: Unit,
    },
    Pose {
        pose: Pose,
    },
    Object {
        label: String,
    },
    Text {
        text: String,
    },
    Bool {
        value: bool,
    },
}

impl Value {
    pub fn number(value: f64) -> Self {
        Value::Number { value, unit: Unit::None }
    }

    pub fn meters(value: f64) -> Self {
        Value::Number { value, unit: Unit::Meters }
    }

    pub fn radians(value: f64) -> Self {
        Value::Number { value, unit: Unit::Radians }
    }

    pub fn pose(pose: Pose) -> Self {
        Value::Pose { pose }
    }

    pub fn object(label: impl Into<String>) -> Self {
        Value::Object { label: label.into() }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Value::Text { text: text.into() }
    }

    /// Short name of the literal kind, used in diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Number { unit: Unit::None, .. } => "number",
            Value::Number { unit: Unit::Meters, .. } => "length",
            Value::Number { unit: Unit::Radians, .. } => "angle",
            Value::Pose { .. } => "pose",
            Value::Object { .. } => "object",
            Value::Text { .. } => "string",
            Value::Bool { .. } => "bool",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn as_object(&self) -> Option<&str> {
        match self {
            Value::Object { label } => Some(label),
            _ => None,
        }
    }

    pub fn as_pose(&self) -> Option<&Pose> {
        match self {
            Value::Pose { pose } => Some(pose),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number { value, unit } => write!(f, "{}{}", value, unit.suffix()),
            Value::Pose { pose } => {
                let a = pose.to_array();
                write!(f, "pose({},{},{},{},{},{})", a[0], a[1], a[2], a[3], a[4], a[5])
            }
            Value::Object { label } => write!(f, "obj({})", quote(label)),
            Value::Text { text } => f.write_str(&quote(text)),
            Value::Bool { value } => write!(f, "{value}"),
        }
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// One skill invocation `k(θ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCall {
    pub skill: String,
    pub args: Vec<Value>,
}

impl SkillCall {
    pub fn new(skill: impl Into<String>, args: Vec<Value>) -> Self {
        SkillCall { skill: skill.into(), args }
    }
}

impl fmt::Display for SkillCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.skill)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

/// Source location of a literal, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub column: usize,
}

/// A parsed skill program.
///
/// Equality is structural over the calls; recorded literal spans are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillProgram {
    pub calls: Vec<SkillCall>,
    /// Per call, the source span of each argument literal (empty when built
    /// programmatically).
    #[serde(skip)]
    pub spans: Vec<Vec<Span>>,
}

impl PartialEq for SkillProgram {
    fn eq(&self, other: &Self) -> bool {
        self.calls == other.calls
    }
}

impl SkillProgram {
    pub fn new(calls: Vec<SkillCall>) -> Self {
        SkillProgram { calls, spans: Vec::new() }
    }

    /// Canonical text: calls separated by `;\n`, no spaces inside calls.
    pub fn render(&self) -> String {
        self.calls.iter().map(ToString::to_string).collect::<Vec<_>>().join(";\n")
    }

    pub fn source_text(&self) -> String {
        self.render()
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }
}

impl fmt::Display for SkillProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Renders a program to canonical text.
pub fn render(program: &SkillProgram) -> String {
    program.render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_call_canonical_layout() {
        let p = parse("move_to(pose(0.5,-0.3,0.2,0,0,0)); close_gripper()").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.render(), "move_to(pose(0.5,-0.3,0.2,0,0,0));\nclose_gripper()");
    }

    #[test]
    fn render_is_idempotent() {
        let src = "grasp( obj(\"door handle\") )\nrotate_joint(obj(\"door\"), -1.2rad) ; move_delta(0, 0, 1e-1m)";
        let once = parse(src).unwrap().render();
        let twice = parse(&once).unwrap().render();
        assert_eq!(once, twice);
    }

    #[test]
    fn strings_escape_round_trip() {
        let p = SkillProgram::new(vec![SkillCall::new("say", vec![Value::text("a \"quoted\"\\ line\n")])]);
        assert_eq!(parse(&p.render()).unwrap(), p);
    }
}
