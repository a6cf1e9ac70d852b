use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SkillProgram, Unit, Value};

/// Argument kind in a skill signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Pose,
    /// Meters; accepts untagged or `m` numbers.
    Length,
    /// Radians; accepts untagged or `rad` numbers.
    Angle,
    /// Joint motion: radians for hinges, meters for prismatic joints.
    JointDelta,
    /// Any number, tagged or not.
    Scalar,
    Object,
    Text,
    Bool,
}

impl ParamKind {
    pub fn accepts(self, value: &Value) -> bool {
        match (self, value) {
            (ParamKind::Pose, Value::Pose { .. }) => true,
            (ParamKind::Length, Value::Number { unit, .. }) => {
                matches!(unit, Unit::None | Unit::Meters)
            }
            (ParamKind::Angle, Value::Number { unit, .. }) => {
                matches!(unit, Unit::None | Unit::Radians)
            }
            (ParamKind::JointDelta, Value::Number { .. }) => true,
            (ParamKind::Scalar, Value::Number { .. }) => true,
            (ParamKind::Object, Value::Object { .. }) => true,
            (ParamKind::Text, Value::Text { .. }) => true,
            (ParamKind::Bool, Value::Bool { .. }) => true,
            _ => false,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Pose => "pose",
            ParamKind::Length => "length",
            ParamKind::Angle => "angle",
            ParamKind::JointDelta => "joint_delta",
            ParamKind::Scalar => "number",
            ParamKind::Object => "object",
            ParamKind::Text => "string",
            ParamKind::Bool => "bool",
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSignature {
    pub name: String,
    pub params: Vec<(String, ParamKind)>,
    pub description: String,
}

impl SkillSignature {
    /// `move_to(target: pose)`
    pub fn signature_text(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|(n, k)| format!("{n}: {k}")).collect();
        format!("{}({})", self.name, params.join(", "))
    }
}

/// The skill library: every skill the policy may call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRegistry {
    signatures: BTreeMap<String, SkillSignature>,
}

impl SkillRegistry {
    pub fn empty() -> Self {
        SkillRegistry { signatures: BTreeMap::new() }
    }

    /// Registers a skill. Names must be unique and descriptions non-empty.
    pub fn register(&mut self, name: &str, params: &[(&str, ParamKind)], description: &str) -> Result<(), String> {
        if self.signatures.contains_key(name) {
            return Err(format!("skill `{name}` already registered"));
        }
        if description.trim().is_empty() {
            return Err(format!("skill `{name}` needs a description"));
        }
        self.signatures.insert(
            name.to_string(),
            SkillSignature {
                name: name.to_string(),
                params: params.iter().map(|(n, k)| (n.to_string(), *k)).collect(),
                description: description.to_string(),
            },
        );
        Ok(())
    }

    /// The tabletop skill set executed by the simulator.
    pub fn standard() -> Self {
        use ParamKind::*;
        let mut r = SkillRegistry::empty();
        let skills: &[(&str, &[(&str, ParamKind)], &str)] = &[
            ("move_to", &[("target", Pose)], "Move the end-effector in a straight line to an absolute pose."),
            (
                "move_delta",
                &[("dx", Length), ("dy", Length), ("dz", Length)],
                "Translate the end-effector by a relative offset in meters, keeping its orientation.",
            ),
            (
                "grasp",
                &[("object", Object)],
                "Close the gripper on an object; the gripper must already be within 3 cm of it.",
            ),
            ("release", &[], "Open the gripper and let go of the held object, which settles onto the surface below."),
            ("open_gripper", &[], "Open the gripper fingers (drops anything held)."),
            ("close_gripper", &[], "Close the gripper fingers without grasping."),
            (
                "rotate_joint",
                &[("joint", Object), ("delta", JointDelta)],
                "Move an articulated part (door, lid, cap, drawer, faucet) along its joint by a relative amount: radians for hinges, meters for sliders. The gripper must be holding the part's handle.",
            ),
            ("set_yaw", &[("yaw", Angle)], "Rotate the gripper about the vertical axis to an absolute yaw."),
        ];
        for (name, params, desc) in skills {
            r.register(name, params, desc).expect("standard registry is well formed");
        }
        r
    }

    pub fn get(&self, name: &str) -> Option<&SkillSignature> {
        self.signatures.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.signatures.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SkillSignature> {
        self.signatures.values()
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("call {call_index} (`{skill}`): {kind}")]
pub struct ValidationError {
    pub call_index: usize,
    pub skill: String,
    pub kind: ValidationErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationErrorKind {
    #[error("unknown skill")]
    UnknownSkill,
    #[error("expected {expected} arguments, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("argument {arg_index} should be {expected}, found {found}")]
    KindMismatch { arg_index: usize, expected: ParamKind, found: String },
}

/// Checks every call against the registry. Returns all problems found.
pub fn validate(program: &SkillProgram, registry: &SkillRegistry) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    for (i, call) in program.calls.iter().enumerate() {
        let err = |kind| ValidationError { call_index: i, skill: call.skill.clone(), kind };
        let Some(sig) = registry.get(&call.skill) else {
            errors.push(err(ValidationErrorKind::UnknownSkill));
            continue;
        };
        if sig.params.len() != call.args.len() {
            errors.push(err(ValidationErrorKind::Arity { expected: sig.params.len(), found: call.args.len() }));
            continue;
        }
        for (j, ((_, kind), arg)) in sig.params.iter().zip(&call.args).enumerate() {
            if !kind.accepts(arg) {
                errors.push(err(ValidationErrorKind::KindMismatch {
                    arg_index: j,
                    expected: *kind,
                    found: arg.kind_name().to_string(),
                }));
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}
