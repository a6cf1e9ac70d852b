use serde::{Deserialize, Serialize};

use super::world::World;

/// Goal predicates over a world, written in task files as externally
/// tagged tables, e.g. `{ on = { object = "banana", support = "plate" } }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    On {
        object: String,
        support: String,
    },
    Inside {
        object: String,
        container: String,
    },
    /// A joint (by name or part label) at or past its open threshold.
    Open(String),
    Closed(String),
    Held(String),
    /// Bottom at least `height` above the table.
    Lifted {
        object: String,
        height: f64,
    },
    OnTable(String),
    /// Horizontal distance of the object's center to a point.
    Near {
        object: String,
        position: [f64; 2],
        distance: f64,
    },
    /// Horizontal center distance between two objects.
    NearObject {
        object: String,
        target: String,
        distance: f64,
    },
    /// Center over the target's footprint and bottom above its top.
    Above {
        object: String,
        target: String,
    },
    Tilted {
        object: String,
        min_angle: f64,
    },
    Poured {
        source: String,
        target: String,
    },
    Wiped {
        surface: String,
        strokes: u32,
    },
    Not(Box<Predicate>),
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
}

impl Predicate {
    pub fn eval(&self, w: &World) -> bool {
        let xy_dist = |a: [f64; 3], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        match self {
            Predicate::On { object, support } => w.on(object, support),
            Predicate::Inside { object, container } => w.inside(object, container),
            Predicate::Open(j) => w.joint(j).is_some_and(|j| j.is_open()),
            Predicate::Closed(j) => w.joint(j).is_some_and(|j| !j.is_open()),
            Predicate::Held(o) => w.gripper.held.as_deref() == Some(o.as_str()),
            Predicate::Lifted { object, height } => {
                w.body(object).is_some_and(|b| b.bottom() >= w.table_height + height)
            }
            Predicate::OnTable(o) => w.on_table(o),
            Predicate::Near { object, position, distance } => {
                w.body(object).is_some_and(|b| xy_dist(b.center(), *position) <= *distance)
            }
            Predicate::NearObject { object, target, distance } => match (w.body(object), w.body(target)) {
                (Some(a), Some(b)) => xy_dist(a.center(), [b.center()[0], b.center()[1]]) <= *distance,
                _ => false,
            },
            Predicate::Above { object, target } => match (w.body(object), w.body(target)) {
                (Some(a), Some(b)) => b.aabb().contains_xy(a.center()) && a.bottom() >= b.top(),
                _ => false,
            },
            Predicate::Tilted { object, min_angle } => w.body(object).is_some_and(|b| b.pose.tilt() >= *min_angle),
            Predicate::Poured { source, target } => w.facts.poured.contains(&(source.clone(), target.clone())),
            Predicate::Wiped { surface, strokes } => w.facts.wipes.get(surface).copied().unwrap_or(0) >= *strokes,
            Predicate::Not(p) => !p.eval(w),
            Predicate::All(ps) => ps.iter().all(|p| p.eval(w)),
            Predicate::Any(ps) => ps.iter().any(|p| p.eval(w)),
        }
    }

    /// Every object or joint label the predicate mentions.
    pub fn labels(&self) -> Vec<&str> {
        match self {
            Predicate::On { object, support: other }
            | Predicate::Inside { object, container: other }
            | Predicate::NearObject { object, target: other, .. }
            | Predicate::Above { object, target: other }
            | Predicate::Poured { source: object, target: other } => vec![object, other],
            Predicate::Open(l)
            | Predicate::Closed(l)
            | Predicate::Held(l)
            | Predicate::OnTable(l)
            | Predicate::Lifted { object: l, .. }
            | Predicate::Near { object: l, .. }
            | Predicate::Tilted { object: l, .. }
            | Predicate::Wiped { surface: l, .. } => vec![l],
            Predicate::Not(p) => p.labels(),
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().flat_map(|p| p.labels()).collect(),
        }
    }
}
