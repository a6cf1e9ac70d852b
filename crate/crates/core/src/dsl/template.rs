//! Skill templates: successful programs with their hardcoded values lifted
//! into scene lookups or free parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{quote, ParamKind, SkillCall, SkillProgram, Unit, Value};
use crate::geometry::Pose;
use crate::scene::SceneGraph;

/// Literal-to-scene match tolerance (meters, component-wise).
pub const MATCH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateParam {
    pub name: String,
    pub kind: ParamKind,
    /// Value in the originating program (object params: the original label).
    pub default: Value,
}

/// How a slot in the template body obtains its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Binding {
    /// `obj(<label of param>)`
    ObjectRef { param: String },
    /// The bound object's full pose.
    ObjectPose { param: String },
    /// The bound object's position with a fixed orientation.
    ObjectPosition { param: String, rpy: [f64; 3] },
    /// One extent of the bound object's box.
    ObjectDimension { param: String, axis: usize, unit: Unit },
    /// A caller-supplied value.
    Free { param: String },
}

impl Binding {
    pub fn param(&self) -> &str {
        match self {
            Binding::ObjectRef { param }
            | Binding::ObjectPose { param }
            | Binding::ObjectPosition { param, .. }
            | Binding::ObjectDimension { param, .. }
            | Binding::Free { param } => param,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TemplateArg {
    Literal { value: Value },
    Slot { slot: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateCall {
    pub skill: String,
    pub args: Vec<TemplateArg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub params: Vec<TemplateParam>,
    pub bindings: BTreeMap<String, Binding>,
    pub body: Vec<TemplateCall>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstantiateError {
    #[error("object `{label}` is not in the scene")]
    MissingObject { label: String },
    #[error("free parameter `{name}` has no assignment")]
    MissingParam { name: String },
    #[error("parameter `{name}` should be {expected}, found {found}")]
    KindMismatch { name: String, expected: ParamKind, found: String },
    #[error("template `{template}` takes {expected} arguments, found {found}")]
    TooManyArgs { template: String, expected: usize, found: usize },
    #[error("malformed template: {0}")]
    Malformed(String),
}

const AXES: [&str; 3] = ["x", "y", "z"];

impl Template {
    pub fn param(&self, name: &str) -> Option<&TemplateParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Assignment that reproduces the originating program.
    pub fn defaults(&self) -> BTreeMap<String, Value> {
        self.params.iter().map(|p| (p.name.clone(), p.default.clone())).collect()
    }

    pub fn free_params(&self) -> impl Iterator<Item = &TemplateParam> {
        self.params.iter().filter(|p| p.kind != ParamKind::Object)
    }

    /// Structural check: every body slot is bound exactly once and every
    /// binding names a declared parameter of a compatible kind.
    pub fn check(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for call in &self.body {
            for arg in &call.args {
                if let TemplateArg::Slot { slot } = arg {
                    if !seen.insert(slot.as_str()) {
                        return Err(format!("slot `{slot}` used twice"));
                    }
                    if !self.bindings.contains_key(slot) {
                        return Err(format!("slot `{slot}` is unbound"));
                    }
                }
            }
        }
        for (slot, binding) in &self.bindings {
            if !seen.contains(slot.as_str()) {
                return Err(format!("binding for unused slot `{slot}`"));
            }
            let Some(param) = self.param(binding.param()) else {
                return Err(format!("slot `{slot}` refers to undeclared parameter `{}`", binding.param()));
            };
            let object_binding = !matches!(binding, Binding::Free { .. });
            if object_binding != (param.kind == ParamKind::Object) {
                return Err(format!("slot `{slot}` binds parameter `{}` of kind {}", param.name, param.kind));
            }
        }
        let mut names = BTreeSet::new();
        for p in &self.params {
            if !names.insert(p.name.as_str()) {
                return Err(format!("duplicate parameter `{}`", p.name));
            }
            if !p.kind.accepts(&p.default) {
                return Err(format!("default of `{}` is not a {}", p.name, p.kind));
            }
        }
        Ok(())
    }

    /// Positional invocation `name(arg0, arg1, ...)`: arguments map to the
    /// parameters in declaration order; omitted trailing parameters take
    /// their defaults.
    pub fn invoke(&self, args: &[Value], scene: &SceneGraph) -> Result<SkillProgram, InstantiateError> {
        if args.len() > self.params.len() {
            return Err(InstantiateError::TooManyArgs {
                template: self.name.clone(),
                expected: self.params.len(),
                found: args.len(),
            });
        }
        let mut assignment = self.defaults();
        for (p, v) in self.params.iter().zip(args) {
            assignment.insert(p.name.clone(), v.clone());
        }
        instantiate(self, scene, &assignment)
    }

    /// Source form shown to the policy model.
    pub fn render_source(&self) -> String {
        let params: Vec<String> =
            self.params.iter().map(|p| format!("{}: {} = {}", p.name, p.kind, render_default(&p.default))).collect();
        let mut out = format!("template {}({}) {{\n", self.name, params.join(", "));
        let calls: Vec<String> = self
            .body
            .iter()
            .map(|c| {
                let args: Vec<String> = c
                    .args
                    .iter()
                    .map(|a| match a {
                        TemplateArg::Literal { value } => value.to_string(),
                        TemplateArg::Slot { slot } => match self.bindings.get(slot) {
                            Some(Binding::ObjectRef { param }) | Some(Binding::Free { param }) => param.clone(),
                            Some(Binding::ObjectPose { param }) => format!("pose_of({param})"),
                            Some(Binding::ObjectPosition { param, rpy }) => {
                                format!("pose_at({param},{},{},{})", rpy[0], rpy[1], rpy[2])
                            }
                            Some(Binding::ObjectDimension { param, axis, unit }) => {
                                let suffix = match unit {
                                    Unit::Meters => "m",
                                    _ => "",
                                };
                                format!("size_of({param},{}){suffix}", AXES[*axis])
                            }
                            None => format!("?{slot}"),
                        },
                    })
                    .collect();
                format!("  {}({})", c.skill, args.join(","))
            })
            .collect();
        out.push_str(&calls.join(";\n"));
        let _ = write!(out, "\n}}");
        out
    }
}

fn render_default(v: &Value) -> String {
    match v {
        Value::Object { label } => quote(label),
        other => other.to_string(),
    }
}

/// Lifts a program into a template named `"template"`. See [`templatize_named`].
pub fn templatize(program: &SkillProgram, scene: &SceneGraph) -> Template {
    templatize_named(program, scene, "template")
}

/// Lifts a program that succeeded in `scene` into a template.
///
/// Object references and pose literals whose position matches a scene node
/// (within [`MATCH_TOLERANCE`]) become bindings to an object parameter;
/// numbers matching an extent of an object the program already touches
/// become dimension lookups. All other numbers and poses become free
/// parameters whose defaults are the original literals.
pub fn templatize_named(program: &SkillProgram, scene: &SceneGraph, name: &str) -> Template {
    let pose_match = |pose: &Pose| scene.nodes.iter().find(|n| n.pose.position_approx_eq(pose, MATCH_TOLERANCE));

    // Objects the program interacts with, in order of first reference.
    let mut touched: Vec<String> = Vec::new();
    for call in &program.calls {
        for arg in &call.args {
            let label = match arg {
                Value::Object { label } if scene.has_label(label) => Some(label.clone()),
                Value::Pose { pose } => pose_match(pose).map(|n| n.label.clone()),
                _ => None,
            };
            if let Some(label) = label {
                if !touched.contains(&label) {
                    touched.push(label);
                }
            }
        }
    }

    let mut used_names: BTreeSet<String> = BTreeSet::new();
    let mut object_params: BTreeMap<String, String> = BTreeMap::new();
    let mut params = Vec::new();
    for label in &touched {
        let base = param_base_name(label);
        let mut candidate = base.clone();
        let mut n = 2;
        while used_names.contains(&candidate) || is_free_name(&candidate) {
            candidate = format!("{base}_{n}");
            n += 1;
        }
        used_names.insert(candidate.clone());
        object_params.insert(label.clone(), candidate.clone());
        params.push(TemplateParam { name: candidate, kind: ParamKind::Object, default: Value::object(label.clone()) });
    }

    let mut bindings = BTreeMap::new();
    let mut body = Vec::new();
    let mut free_count = 0;
    let mut slot_count = 0;
    for call in &program.calls {
        let mut args = Vec::new();
        for arg in &call.args {
            let binding = match arg {
                Value::Object { label } => object_params.get(label).map(|p| Binding::ObjectRef { param: p.clone() }),
                Value::Pose { pose } => match pose_match(pose) {
                    Some(node) => {
                        let param = object_params[&node.label].clone();
                        if node.pose.rpy == pose.rpy {
                            Some(Binding::ObjectPose { param })
                        } else {
                            Some(Binding::ObjectPosition { param, rpy: pose.rpy })
                        }
                    }
                    None => None,
                },
                Value::Number { value, unit: unit @ (Unit::None | Unit::Meters) } => touched.iter().find_map(|label| {
                    let node = scene.node(label)?;
                    let axis = node.dimensions.iter().position(|d| (d - value).abs() <= MATCH_TOLERANCE)?;
                    Some(Binding::ObjectDimension { param: object_params[label].clone(), axis, unit: *unit })
                }),
                _ => None,
            };
            let binding = match (binding, arg) {
                (Some(b), _) => Some(b),
                (None, Value::Pose { .. } | Value::Number { .. }) => {
                    let name = format!("p{free_count}");
                    free_count += 1;
                    let kind = match arg {
                        Value::Pose { .. } => ParamKind::Pose,
                        Value::Number { unit: Unit::Meters, .. } => ParamKind::Length,
                        Value::Number { unit: Unit::Radians, .. } => ParamKind::Angle,
                        _ => ParamKind::Scalar,
                    };
                    params.push(TemplateParam { name: name.clone(), kind, default: arg.clone() });
                    Some(Binding::Free { param: name })
                }
                (None, _) => None,
            };
            match binding {
                Some(b) => {
                    let slot = format!("s{slot_count}");
                    slot_count += 1;
                    bindings.insert(slot.clone(), b);
                    args.push(TemplateArg::Slot { slot });
                }
                None => args.push(TemplateArg::Literal { value: arg.clone() }),
            }
        }
        body.push(TemplateCall { skill: call.skill.clone(), args });
    }

    Template { name: sanitize_identifier(name), params, bindings, body }
}

fn is_free_name(s: &str) -> bool {
    s.len() > 1 && s.starts_with('p') && s[1..].chars().all(|c| c.is_ascii_digit())
}

fn param_base_name(label: &str) -> String {
    let last = label.split_whitespace().last().unwrap_or("object");
    sanitize_identifier(last)
}

/// Lowercase identifier with non-alphanumerics folded to `_`.
pub fn sanitize_identifier(s: &str) -> String {
    let mut out: String =
        s.trim().to_lowercase().chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    out
}

/// Produces a concrete program from a template, a scene and a parameter
/// assignment. Object parameters missing from `args` fall back to their
/// default labels; free parameters must be assigned.
pub fn instantiate(
    template: &Template,
    scene: &SceneGraph,
    args: &BTreeMap<String, Value>,
) -> Result<SkillProgram, InstantiateError> {
    let mut labels: BTreeMap<&str, String> = BTreeMap::new();
    for p in template.params.iter().filter(|p| p.kind == ParamKind::Object) {
        let value = args.get(&p.name).unwrap_or(&p.default);
        let Some(label) = value.as_object() else {
            return Err(InstantiateError::KindMismatch {
                name: p.name.clone(),
                expected: ParamKind::Object,
                found: value.kind_name().to_string(),
            });
        };
        labels.insert(p.name.as_str(), label.to_string());
    }

    let node_of = |param: &str| -> Result<&crate::scene::SceneNode, InstantiateError> {
        let label = labels
            .get(param)
            .ok_or_else(|| InstantiateError::Malformed(format!("unknown object parameter `{param}`")))?;
        scene.node(label).ok_or_else(|| InstantiateError::MissingObject { label: label.clone() })
    };

    let mut calls = Vec::with_capacity(template.body.len());
    for call in &template.body {
        let mut values = Vec::with_capacity(call.args.len());
        for arg in &call.args {
            let value = match arg {
                TemplateArg::Literal { value } => value.clone(),
                TemplateArg::Slot { slot } => {
                    let binding = template
                        .bindings
                        .get(slot)
                        .ok_or_else(|| InstantiateError::Malformed(format!("slot `{slot}` is unbound")))?;
                    match binding {
                        Binding::ObjectRef { param } => Value::object(node_of(param)?.label.clone()),
                        Binding::ObjectPose { param } => Value::pose(node_of(param)?.pose),
                        Binding::ObjectPosition { param, rpy } => {
                            Value::pose(Pose { position: node_of(param)?.pose.position, rpy: *rpy })
                        }
                        Binding::ObjectDimension { param, axis, unit } => {
                            let dims = node_of(param)?.dimensions;
                            let d = *dims
                                .get(*axis)
                                .ok_or_else(|| InstantiateError::Malformed(format!("axis {axis} out of range")))?;
                            Value::Number { value: d, unit: *unit }
                        }
                        Binding::Free { param } => {
                            let p = template.param(param).ok_or_else(|| {
                                InstantiateError::Malformed(format!("undeclared parameter `{param}`"))
                            })?;
                            let v = args
                                .get(param)
                                .ok_or_else(|| InstantiateError::MissingParam { name: param.clone() })?;
                            if !p.kind.accepts(v) {
                                return Err(InstantiateError::KindMismatch {
                                    name: param.clone(),
                                    expected: p.kind,
                                    found: v.kind_name().to_string(),
                                });
                            }
                            v.clone()
                        }
                    }
                }
            };
            values.push(value);
        }
        calls.push(SkillCall { skill: call.skill.clone(), args: values });
    }
    Ok(SkillProgram::new(calls))
}
