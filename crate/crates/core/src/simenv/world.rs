//! Kinematic tabletop world: rigid boxes, hinge/prismatic joints, and a
//! point gripper. Every skill call either applies completely or reports a
//! violation and leaves the world untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsl::{SkillCall, Unit, Value};
use crate::geometry::{rotate_about, slide_along, Aabb, Pose};
use crate::scene::{SceneEdge, SceneGraph, SceneNode};

/// Max gripper-to-object distance for a grasp, meters.
pub const GRASP_TOLERANCE: f64 = 0.03;
/// Vertical gap under which one box rests on another, meters.
pub const CONTACT_TOLERANCE: f64 = 0.01;
/// Tilt from vertical at which a held object pours, radians.
pub const POUR_TILT: f64 = 1.2;
/// Minimum horizontal travel of a wiping stroke, meters.
pub const WIPE_STROKE: f64 = 0.03;
const EPS: f64 = 1e-9;
/// Segments grazing a box face by less than this do not collide.
const GRAZE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub label: String,
    pub class: String,
    pub pose: Pose,
    /// Full extents along the body axes.
    pub dimensions: [f64; 3],
    #[serde(default)]
    pub graspable: bool,
    /// Open-top: objects dropped over it settle onto its floor.
    #[serde(default)]
    pub container: bool,
}

impl Body {
    pub fn aabb(&self) -> Aabb {
        Aabb::of_body(&self.pose, self.dimensions)
    }

    pub fn bottom(&self) -> f64 {
        self.aabb().min[2]
    }

    pub fn top(&self) -> f64 {
        self.aabb().max[2]
    }

    pub fn center(&self) -> [f64; 3] {
        self.pose.position
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Hinge,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    /// Usually the label of the main moving part ("toaster door").
    pub name: String,
    pub kind: JointKind,
    pub pivot: [f64; 3],
    /// Unit axis; rotation follows the right-hand rule.
    pub axis: [f64; 3],
    pub range: [f64; 2],
    #[serde(default)]
    pub position: f64,
    /// Labels of the bodies this joint moves.
    pub parts: Vec<String>,
    /// The part the gripper must hold to drive the joint.
    pub handle: String,
    /// |position| at or above which the joint counts as open.
    pub open_threshold: f64,
    /// Part poses at position 0, filled in by [`World::finalize`].
    #[serde(default)]
    pub rest: Vec<Pose>,
}

impl Joint {
    pub fn is_open(&self) -> bool {
        self.position.abs() >= self.open_threshold
    }

    /// Pose of part `i` at joint position `q`.
    pub fn part_pose(&self, i: usize, q: f64) -> Pose {
        match self.kind {
            JointKind::Hinge => rotate_about(&self.rest[i], self.pivot, self.axis, q),
            JointKind::Prismatic => slide_along(&self.rest[i], self.axis, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub pose: Pose,
    #[serde(default = "default_true")]
    pub open: bool,
    #[serde(default)]
    pub held: Option<String>,
    /// Held object pose relative to the gripper.
    #[serde(default)]
    pub grasp_offset: Option<Pose>,
    /// Objects riding on the held object, with poses relative to the gripper.
    #[serde(default)]
    pub carried: Vec<(String, Pose)>,
}

fn default_true() -> bool {
    true
}

/// Latched facts that geometry alone cannot recover afterwards.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Facts {
    /// (source, target) pairs that have been poured.
    #[serde(default)]
    pub poured: BTreeSet<(String, String)>,
    /// Wiping strokes per surface.
    #[serde(default)]
    pub wipes: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TableCollision,
    ObjectCollision,
    GraspOutOfReach,
    NothingHeld,
    JointLimit,
    UnknownObject,
    InvalidCall,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::TableCollision => "table_collision",
            ViolationKind::ObjectCollision => "object_collision",
            ViolationKind::GraspOutOfReach => "grasp_out_of_reach",
            ViolationKind::NothingHeld => "nothing_held",
            ViolationKind::JointLimit => "joint_limit",
            ViolationKind::UnknownObject => "unknown_object",
            ViolationKind::InvalidCall => "invalid_call",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        use ViolationKind::*;
        [TableCollision, ObjectCollision, GraspOutOfReach, NothingHeld, JointLimit, UnknownObject, InvalidCall]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StepOutcome {
    Ok,
    Violation { kind: ViolationKind, detail: String },
}

impl StepOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, StepOutcome::Ok)
    }

    pub fn violation(&self) -> Option<ViolationKind> {
        match self {
            StepOutcome::Violation { kind, .. } => Some(*kind),
            StepOutcome::Ok => None,
        }
    }
}

struct Violation(ViolationKind, String);

fn violation<T>(kind: ViolationKind, detail: impl Into<String>) -> Result<T, Violation> {
    Err(Violation(kind, detail.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    #[serde(default)]
    pub table_height: f64,
    pub gripper: Gripper,
    pub objects: Vec<Body>,
    #[serde(default)]
    pub joints: Vec<Joint>,
    #[serde(default)]
    pub facts: Facts,
}

impl World {
    /// Validates structure, records joint rest poses (part poses as given
    /// are taken at position 0) and applies the initial joint positions.
    pub fn finalize(mut self) -> Result<Self, String> {
        let mut seen = BTreeSet::new();
        for b in &self.objects {
            if !seen.insert(b.label.as_str()) {
                return Err(format!("duplicate object label `{}`", b.label));
            }
            if b.dimensions.iter().any(|d| !(*d > 0.0)) {
                return Err(format!("`{}` needs positive dimensions", b.label));
            }
        }
        for j in 0..self.joints.len() {
            let joint = &self.joints[j];
            if !joint.parts.contains(&joint.handle) {
                return Err(format!("joint `{}`: handle must be one of its parts", joint.name));
            }
            if !(joint.range[0] <= 0.0 && 0.0 <= joint.range[1]) {
                return Err(format!("joint `{}`: range must contain 0", joint.name));
            }
            if joint.position < joint.range[0] || joint.position > joint.range[1] {
                return Err(format!("joint `{}`: position outside range", joint.name));
            }
            let n = (joint.axis[0].powi(2) + joint.axis[1].powi(2) + joint.axis[2].powi(2)).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(format!("joint `{}`: axis must be unit length", joint.name));
            }
            let mut rest = Vec::new();
            for p in &joint.parts {
                let body = self.body(p).ok_or_else(|| format!("joint `{}`: unknown part `{p}`", joint.name))?;
                rest.push(body.pose);
            }
            self.joints[j].rest = rest;
            let q = self.joints[j].position;
            for (i, p) in self.joints[j].parts.clone().iter().enumerate() {
                let pose = self.joints[j].part_pose(i, q);
                self.body_mut(p).expect("part exists").pose = pose;
            }
        }
        for b in &self.objects {
            if b.bottom() < self.table_height - 1e-6 {
                return Err(format!("`{}` starts below the table", b.label));
            }
        }
        Ok(self)
    }

    pub fn body(&self, label: &str) -> Option<&Body> {
        self.objects.iter().find(|b| b.label == label)
    }

    fn body_mut(&mut self, label: &str) -> Option<&mut Body> {
        self.objects.iter_mut().find(|b| b.label == label)
    }

    /// Joint addressed by its name or by any of its parts.
    pub fn joint(&self, label: &str) -> Option<&Joint> {
        self.joints
            .iter()
            .find(|j| j.name == label)
            .or_else(|| self.joints.iter().find(|j| j.parts.iter().any(|p| p == label)))
    }

    fn joint_index(&self, label: &str) -> Option<usize> {
        self.joints
            .iter()
            .position(|j| j.name == label)
            .or_else(|| self.joints.iter().position(|j| j.parts.iter().any(|p| p == label)))
    }

    fn is_part(&self, label: &str) -> bool {
        self.joints.iter().any(|j| j.parts.iter().any(|p| p == label))
    }

    /// The joint whose handle the gripper is holding.
    fn held_joint(&self) -> Option<&Joint> {
        let held = self.gripper.held.as_deref()?;
        self.joints.iter().find(|j| j.handle == held)
    }

    pub fn is_held(&self, label: &str) -> bool {
        self.gripper.held.as_deref() == Some(label) || self.gripper.carried.iter().any(|(l, _)| l == label)
    }

    /// `a` rests on top of `b`.
    pub fn on(&self, a: &str, b: &str) -> bool {
        let (Some(x), Some(y)) = (self.body(a), self.body(b)) else {
            return false;
        };
        a != b
            && !self.is_held(a)
            && (x.bottom() - y.top()).abs() <= CONTACT_TOLERANCE
            && y.aabb().contains_xy(x.center())
    }

    /// Center of `a` lies strictly inside the box of `c`.
    pub fn inside(&self, a: &str, c: &str) -> bool {
        let (Some(x), Some(y)) = (self.body(a), self.body(c)) else {
            return false;
        };
        a != c && !self.is_held(a) && y.aabb().contains(x.center())
    }

    pub fn on_table(&self, a: &str) -> bool {
        self.body(a).is_some_and(|x| !self.is_held(a) && (x.bottom() - self.table_height).abs() <= CONTACT_TOLERANCE)
    }

    /// Applies one skill call. On violation the world is unchanged.
    pub fn step(&mut self, call: &SkillCall) -> StepOutcome {
        let mut next = self.clone();
        match next.apply(call) {
            Ok(()) => {
                *self = next;
                StepOutcome::Ok
            }
            Err(Violation(kind, detail)) => StepOutcome::Violation { kind, detail },
        }
    }

    fn apply(&mut self, call: &SkillCall) -> Result<(), Violation> {
        let args = &call.args;
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                violation(ViolationKind::InvalidCall, format!("{} takes {n} arguments", call.skill))
            }
        };
        let number = |i: usize| -> Result<(f64, Unit), Violation> {
            match args.get(i) {
                Some(Value::Number { value, unit }) if value.is_finite() => Ok((*value, *unit)),
                _ => violation(ViolationKind::InvalidCall, format!("argument {i} of {} must be a number", call.skill)),
            }
        };
        let object = |i: usize| -> Result<&str, Violation> {
            match args.get(i) {
                Some(Value::Object { label }) => Ok(label.as_str()),
                _ => violation(ViolationKind::InvalidCall, format!("argument {i} of {} must be an object", call.skill)),
            }
        };
        match call.skill.as_str() {
            "move_to" => {
                arity(1)?;
                let Some(Value::Pose { pose }) = args.first() else {
                    return violation(ViolationKind::InvalidCall, "move_to needs a pose");
                };
                if pose.to_array().iter().any(|v| !v.is_finite()) {
                    return violation(ViolationKind::InvalidCall, "pose is not finite");
                }
                self.move_gripper(*pose)
            }
            "move_delta" => {
                arity(3)?;
                let mut d = [0.0; 3];
                for (i, slot) in d.iter_mut().enumerate() {
                    let (v, unit) = number(i)?;
                    if unit == Unit::Radians {
                        return violation(ViolationKind::InvalidCall, "move_delta takes lengths");
                    }
                    *slot = v;
                }
                let target = self.gripper.pose.translated(d);
                self.move_gripper(target)
            }
            "grasp" => {
                arity(1)?;
                let label = object(0)?.to_string();
                self.grasp(&label)
            }
            "release" => {
                arity(0)?;
                if self.gripper.held.is_none() {
                    return violation(ViolationKind::NothingHeld, "release with an empty gripper");
                }
                self.let_go();
                Ok(())
            }
            "open_gripper" => {
                arity(0)?;
                self.let_go();
                Ok(())
            }
            "close_gripper" => {
                arity(0)?;
                self.gripper.open = false;
                Ok(())
            }
            "rotate_joint" => {
                arity(2)?;
                let label = object(0)?.to_string();
                let (delta, unit) = number(1)?;
                self.rotate_joint(&label, delta, unit)
            }
            "set_yaw" => {
                arity(1)?;
                let (yaw, unit) = number(0)?;
                if unit == Unit::Meters {
                    return violation(ViolationKind::InvalidCall, "set_yaw takes an angle");
                }
                let mut target = self.gripper.pose;
                target.rpy[2] = yaw;
                self.move_gripper(target)
            }
            other => violation(ViolationKind::InvalidCall, format!("unknown skill `{other}`")),
        }
    }

    fn move_gripper(&mut self, target: Pose) -> Result<(), Violation> {
        let start = self.gripper.pose;
        if let Some(j) = self.held_joint() {
            if !start.approx_eq(&target, 1e-12) {
                return violation(
                    ViolationKind::ObjectCollision,
                    format!(
                        "motion constrained by articulated handle `{}`; drive `{}` along its joint",
                        j.handle, j.name
                    ),
                );
            }
            return Ok(());
        }
        let (a, b) = (start.position, target.position);
        if b[2] < self.table_height - EPS {
            return violation(
                ViolationKind::TableCollision,
                format!("target height {:.3} is below the table at {:.3}", b[2], self.table_height),
            );
        }
        let moving: Vec<String> =
            self.gripper.held.iter().cloned().chain(self.gripper.carried.iter().map(|(l, _)| l.clone())).collect();
        for body in &self.objects {
            if moving.contains(&body.label) {
                continue;
            }
            let bb = body.aabb();
            if bb.contains(a) || bb.contains(b) {
                continue;
            }
            if bb.intersects_segment(a, b, GRAZE) {
                return violation(
                    ViolationKind::ObjectCollision,
                    format!("path from {} to {} hits `{}`", fmt_point(a), fmt_point(b), body.label),
                );
            }
        }
        let before = self.held_snapshot();
        self.gripper.pose = target;
        self.sync_held();
        for label in &moving {
            let bottom = self.body(label).expect("held body exists").bottom();
            if bottom < self.table_height - EPS {
                return violation(ViolationKind::TableCollision, format!("held `{label}` would pass below the table"));
            }
        }
        self.track_contact(before);
        Ok(())
    }

    fn held_snapshot(&self) -> Option<Body> {
        self.gripper.held.as_deref().and_then(|l| self.body(l)).cloned()
    }

    fn sync_held(&mut self) {
        let g = self.gripper.pose;
        if let (Some(label), Some(offset)) = (self.gripper.held.clone(), self.gripper.grasp_offset) {
            if let Some(b) = self.body_mut(&label) {
                b.pose = g.compose(&offset);
            }
        }
        for (label, offset) in self.gripper.carried.clone() {
            if let Some(b) = self.body_mut(&label) {
                b.pose = g.compose(&offset);
            }
        }
    }

    /// Latches pouring and counts wiping strokes for the held object.
    fn track_contact(&mut self, before: Option<Body>) {
        let Some(held) = self.held_snapshot() else {
            return;
        };
        let others: Vec<&Body> = self.objects.iter().filter(|b| !self.is_held(&b.label)).collect();
        let mut poured = Vec::new();
        if held.pose.tilt() >= POUR_TILT {
            for t in &others {
                let bb = t.aabb();
                let c = held.center();
                let over = c[0] >= bb.min[0] - 0.03
                    && c[0] <= bb.max[0] + 0.03
                    && c[1] >= bb.min[1] - 0.03
                    && c[1] <= bb.max[1] + 0.03;
                if over && c[2] > bb.max[2] {
                    poured.push((held.label.clone(), t.label.clone()));
                }
            }
        }
        let mut wiped = Vec::new();
        if let Some(prev) = before {
            let travel =
                ((held.center()[0] - prev.center()[0]).powi(2) + (held.center()[1] - prev.center()[1]).powi(2)).sqrt();
            if travel >= WIPE_STROKE {
                for s in &others {
                    let touching = |b: &Body| {
                        (b.bottom() - s.top()).abs() <= CONTACT_TOLERANCE && s.aabb().contains_xy(b.center())
                    };
                    if touching(&prev) && touching(&held) {
                        wiped.push(s.label.clone());
                    }
                }
            }
        }
        self.facts.poured.extend(poured);
        for s in wiped {
            *self.facts.wipes.entry(s).or_default() += 1;
        }
    }

    fn grasp(&mut self, label: &str) -> Result<(), Violation> {
        let Some(body) = self.body(label) else {
            return violation(ViolationKind::UnknownObject, format!("no object `{label}`"));
        };
        if let Some(h) = &self.gripper.held {
            return violation(ViolationKind::GraspOutOfReach, format!("already holding `{h}`"));
        }
        if !body.graspable {
            return violation(ViolationKind::GraspOutOfReach, format!("`{label}` cannot be grasped"));
        }
        let d = self.gripper.pose.distance(&body.pose);
        if d > GRASP_TOLERANCE {
            return violation(
                ViolationKind::GraspOutOfReach,
                format!("`{label}` is {d:.3} m away (tolerance {GRASP_TOLERANCE} m)"),
            );
        }
        let g_inv = self.gripper.pose.inverse();
        let offset = g_inv.compose(&body.pose);
        let carried: Vec<(String, Pose)> = if self.is_part(label) {
            Vec::new()
        } else {
            self.objects
                .iter()
                .filter(|o| {
                    o.label != label
                        && !self.is_part(&o.label)
                        && (self.on(&o.label, label) || self.inside(&o.label, label))
                })
                .map(|o| (o.label.clone(), g_inv.compose(&o.pose)))
                .collect()
        };
        self.gripper.held = Some(label.to_string());
        self.gripper.grasp_offset = Some(offset);
        self.gripper.carried = carried;
        self.gripper.open = false;
        Ok(())
    }

    /// Opens the gripper; a free held object and its riders settle straight
    /// down onto the highest support beneath them.
    fn let_go(&mut self) {
        let held = self.gripper.held.take();
        let carried = std::mem::take(&mut self.gripper.carried);
        self.gripper.grasp_offset = None;
        self.gripper.open = true;
        let Some(label) = held else { return };
        if self.is_part(&label) {
            return;
        }
        let group: Vec<String> = std::iter::once(label.clone()).chain(carried.into_iter().map(|(l, _)| l)).collect();
        let body = self.body(&label).expect("held body exists").clone();
        let support = self.support_height(&body, &group);
        let dz = support - body.bottom();
        for l in &group {
            if let Some(b) = self.body_mut(l) {
                b.pose = b.pose.translated([0.0, 0.0, dz]);
            }
        }
    }

    fn support_height(&self, body: &Body, exclude: &[String]) -> f64 {
        let c = body.center();
        let bottom = body.bottom();
        let mut best = self.table_height;
        for o in &self.objects {
            if exclude.contains(&o.label) {
                continue;
            }
            let bb = o.aabb();
            if !bb.contains_xy(c) {
                continue;
            }
            let surface = if o.container { bb.min[2] } else { bb.max[2] };
            if surface <= bottom + EPS && surface > best {
                best = surface;
            }
        }
        best
    }

    fn rotate_joint(&mut self, label: &str, delta: f64, unit: Unit) -> Result<(), Violation> {
        let Some(ji) = self.joint_index(label) else {
            let detail = if self.body(label).is_some() {
                format!("`{label}` is not articulated")
            } else {
                format!("no object `{label}`")
            };
            return violation(ViolationKind::UnknownObject, detail);
        };
        let joint = self.joints[ji].clone();
        let unit_ok = match joint.kind {
            JointKind::Hinge => unit != Unit::Meters,
            JointKind::Prismatic => unit != Unit::Radians,
        };
        if !unit_ok {
            return violation(ViolationKind::InvalidCall, format!("wrong unit for joint `{}`", joint.name));
        }
        if self.gripper.held.as_deref() != Some(joint.handle.as_str()) {
            return violation(
                ViolationKind::NothingHeld,
                format!("rotate_joint needs the gripper on `{}`", joint.handle),
            );
        }
        let q = joint.position + delta;
        if q < joint.range[0] - EPS || q > joint.range[1] + EPS {
            return violation(
                ViolationKind::JointLimit,
                format!("`{}` position {q:.3} outside [{}, {}]", joint.name, joint.range[0], joint.range[1]),
            );
        }
        let q = q.clamp(joint.range[0], joint.range[1]);
        // Objects resting on or inside a moving part ride along.
        let mut riders = Vec::new();
        for o in &self.objects {
            if joint.parts.contains(&o.label) || self.is_part(&o.label) || self.is_held(&o.label) {
                continue;
            }
            if let Some(pi) = joint.parts.iter().position(|p| self.on(&o.label, p) || self.inside(&o.label, p)) {
                let part = self.body(&joint.parts[pi]).expect("part exists");
                riders.push((o.label.clone(), pi, part.pose.inverse().compose(&o.pose)));
            }
        }
        self.joints[ji].position = q;
        for (i, p) in joint.parts.iter().enumerate() {
            let pose = self.joints[ji].part_pose(i, q);
            self.body_mut(p).expect("part exists").pose = pose;
        }
        for (label, pi, offset) in riders {
            let part_pose = self.body(&joint.parts[pi]).expect("part exists").pose;
            self.body_mut(&label).expect("rider exists").pose = part_pose.compose(&offset);
        }
        let handle = self.body(&joint.handle).expect("handle exists").pose;
        let offset = self.gripper.grasp_offset.expect("holding handle");
        self.gripper.pose = handle.compose(&offset.inverse());
        for b in &self.objects {
            if b.bottom() < self.table_height - 1e-6 {
                return violation(ViolationKind::TableCollision, format!("`{}` would pass below the table", b.label));
            }
        }
        Ok(())
    }

    /// Nodes for every body; relation edges recomputed from geometry.
    pub fn scene_graph(&self) -> SceneGraph {
        let nodes = self
            .objects
            .iter()
            .map(|b| SceneNode {
                label: b.label.clone(),
                class: b.class.clone(),
                pose: b.pose,
                dimensions: b.dimensions,
            })
            .collect();
        let mut edges = Vec::new();
        for b in &self.objects {
            if self.is_part(&b.label) || self.is_held(&b.label) {
                continue;
            }
            if let Some(c) = self.objects.iter().find(|c| c.container && self.inside(&b.label, &c.label)) {
                edges.push(SceneEdge::new(&b.label, "is inside", Some(&c.label)));
            } else if let Some(s) =
                self.objects.iter().filter(|s| self.on(&b.label, &s.label)).max_by(|x, y| x.top().total_cmp(&y.top()))
            {
                edges.push(SceneEdge::new(&b.label, "is on", Some(&s.label)));
            } else if self.on_table(&b.label) {
                edges.push(SceneEdge::new(&b.label, "is on", Some("table")));
            }
        }
        for j in &self.joints {
            edges.push(SceneEdge::new(&j.name, if j.is_open() { "is open" } else { "is closed" }, None));
        }
        if let Some(h) = &self.gripper.held {
            edges.push(SceneEdge::new("gripper", "is holding", Some(h)));
        }
        let mut g = SceneGraph::new(nodes, edges, self.gripper.pose);
        g.raw = Some(std::sync::Arc::new(self.clone()));
        g
    }
}

fn fmt_point(p: [f64; 3]) -> String {
    format!("({:.3},{:.3},{:.3})", p[0], p[1], p[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    pub(crate) fn toaster_world() -> World {
        let w = World {
            table_height: 0.0,
            gripper: Gripper {
                pose: Pose::from_position([0.3, 0.0, 0.4]),
                open: true,
                held: None,
                grasp_offset: None,
                carried: vec![],
            },
            objects: vec![
                Body {
                    label: "toaster".into(),
                    class: "toaster".into(),
                    pose: Pose::from_position([0.65, 0.0, 0.1]),
                    dimensions: [0.2, 0.3, 0.2],
                    graspable: false,
                    container: true,
                },
                Body {
                    label: "toaster door".into(),
                    class: "door".into(),
                    pose: Pose::from_position([0.545, 0.0, 0.1]),
                    dimensions: [0.01, 0.3, 0.18],
                    graspable: false,
                    container: false,
                },
                Body {
                    label: "toaster handle".into(),
                    class: "handle".into(),
                    pose: Pose::from_position([0.52, -0.12, 0.1]),
                    dimensions: [0.02, 0.02, 0.08],
                    graspable: true,
                    container: false,
                },
                Body {
                    label: "banana".into(),
                    class: "banana".into(),
                    pose: Pose::from_position([0.35, -0.25, 0.02]),
                    dimensions: [0.15, 0.04, 0.04],
                    graspable: true,
                    container: false,
                },
            ],
            joints: vec![Joint {
                name: "toaster door".into(),
                kind: JointKind::Hinge,
                pivot: [0.545, 0.15, 0.1],
                axis: [0.0, 0.0, 1.0],
                range: [-1.6, 0.0],
                position: 0.0,
                parts: vec!["toaster door".into(), "toaster handle".into()],
                handle: "toaster handle".into(),
                open_threshold: 0.5,
                rest: vec![],
            }],
            facts: Facts::default(),
        };
        w.finalize().unwrap()
    }

    fn run(w: &mut World, src: &str) -> Vec<StepOutcome> {
        parse(src).unwrap().calls.iter().map(|c| w.step(c)).collect()
    }

    #[test]
    fn below_table_is_table_collision() {
        let mut w = toaster_world();
        let before = w.clone();
        let out = run(&mut w, "move_to(pose(0.3,0,-0.01,0,0,0))");
        assert_eq!(out[0].violation(), Some(ViolationKind::TableCollision));
        assert_eq!(w, before);
    }

    #[test]
    fn grasped_object_tracks_gripper() {
        let mut w = toaster_world();
        let out = run(&mut w, "move_to(pose(0.35,-0.25,0.02,0,0,0)); grasp(obj(\"banana\")); move_delta(0,0,0.1m)");
        assert!(out.iter().all(StepOutcome::is_ok), "{out:?}");
        assert_eq!(w.gripper.held.as_deref(), Some("banana"));
        let b = w.body("banana").unwrap();
        assert!(b.pose.approx_eq(&w.gripper.pose.compose(&w.gripper.grasp_offset.unwrap()), 1e-12));
    }

    #[test]
    fn pulling_a_handle_is_constrained() {
        let mut w = toaster_world();
        let out =
            run(&mut w, "move_to(pose(0.52,-0.12,0.1,0,0,0)); grasp(obj(\"toaster handle\")); move_delta(-0.15,0,0)");
        assert!(out[0].is_ok() && out[1].is_ok());
        assert_eq!(out[2].violation(), Some(ViolationKind::ObjectCollision));
    }

    #[test]
    fn rotating_the_door_follows_forward_kinematics() {
        let mut w = toaster_world();
        let out = run(&mut w, "move_to(pose(0.52,-0.12,0.1,0,0,0)); grasp(obj(\"toaster handle\")); rotate_joint(obj(\"toaster door\"), -1.2rad)");
        assert!(out.iter().all(StepOutcome::is_ok), "{out:?}");
        // Independent FK: planar rotation of the handle about the hinge line.
        let (s, c) = (-1.2f64).sin_cos();
        let (rx, ry) = (0.52 - 0.545, -0.12 - 0.15);
        let expect = [0.545 + c * rx - s * ry, 0.15 + s * rx + c * ry, 0.1];
        let h = w.body("toaster handle").unwrap().pose.position;
        for i in 0..3 {
            assert!((h[i] - expect[i]).abs() < 1e-12, "{h:?} vs {expect:?}");
        }
        assert!(w.joint("toaster door").unwrap().is_open());
        assert!((w.gripper.pose.position[0] - expect[0]).abs() < 1e-12);
    }

    #[test]
    fn joint_limit_leaves_world_unchanged() {
        let mut w = toaster_world();
        run(&mut w, "move_to(pose(0.52,-0.12,0.1,0,0,0)); grasp(obj(\"toaster handle\"))");
        let before = w.clone();
        let out = run(&mut w, "rotate_joint(obj(\"toaster door\"), -2rad)");
        assert_eq!(out[0].violation(), Some(ViolationKind::JointLimit));
        assert_eq!(w, before);
    }

    #[test]
    fn closed_door_blocks_the_toaster_interior() {
        let mut w = toaster_world();
        let out = run(&mut w, "move_to(pose(0.45,0,0.1,0,0,0)); move_to(pose(0.65,0,0.06,0,0,0))");
        assert!(out[0].is_ok());
        assert_eq!(out[1].violation(), Some(ViolationKind::ObjectCollision));
    }

    #[test]
    fn release_settles_on_support() {
        let mut w = toaster_world();
        let out = run(
            &mut w,
            "move_to(pose(0.35,-0.25,0.02,0,0,0)); grasp(obj(\"banana\")); move_to(pose(0.3,0.2,0.2,0,0,0)); release()",
        );
        assert!(out.iter().all(StepOutcome::is_ok), "{out:?}");
        assert!((w.body("banana").unwrap().bottom() - 0.0).abs() < 1e-12);
        assert!(w.on_table("banana"));
        assert_eq!(run(&mut w, "release()")[0].violation(), Some(ViolationKind::NothingHeld));
    }

    #[test]
    fn scene_edges() {
        let w = toaster_world();
        let texts: Vec<String> = w.scene_graph().edges.iter().map(SceneEdge::text).collect();
        assert!(texts.contains(&"the toaster door is closed".to_string()), "{texts:?}");
        assert!(texts.contains(&"the banana is on the table".to_string()));
    }
}
