//! Generators for programs and the scenes they run in.

use memo_core::dsl::{SkillCall, SkillProgram, Unit, Value};
use memo_core::geometry::Pose;
use memo_core::scene::{SceneGraph, SceneNode};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

pub fn unit() -> impl Strategy<Value = Unit> {
    prop_oneof![Just(Unit::None), Just(Unit::Meters), Just(Unit::Radians)]
}

// Scenes whose poses and extents sit on a half-centimeter offset grid, and
// programs whose unmatched literals sit on the whole-centimeter grid, so a
// literal either matches a node exactly or is far outside the tolerance.
pub fn grid(n: i64) -> f64 {
    n as f64 / 100.0 + 0.005
}

pub fn scene() -> impl Strategy<Value = SceneGraph> {
    prop::collection::vec(
        (prop::array::uniform3(-80i64..80), prop::array::uniform3(-3i64..3), prop::array::uniform3(1i64..40)),
        1..6,
    )
    .prop_map(|raw| {
        let nodes = raw
            .into_iter()
            .enumerate()
            .map(|(i, (p, r, d))| SceneNode {
                label: format!("thing{i} {}", ["handle", "door", "cap", "cube"][i % 4]),
                class: "thing".into(),
                // Index-specific x offset keeps node positions distinct.
                pose: Pose::new(
                    grid(p[0]) + i as f64 * 2.0,
                    grid(p[1]),
                    grid(p[2]),
                    r[0] as f64 * 0.5,
                    r[1] as f64 * 0.5,
                    r[2] as f64 * 0.5,
                ),
                dimensions: [grid(d[0]), grid(d[1]), grid(d[2])],
            })
            .collect();
        SceneGraph::new(nodes, vec![], Pose::new(0.3, 0.0, 0.4, 0.0, 0.0, 0.0))
    })
}

#[derive(Debug, Clone)]
pub enum Lit {
    NodeObject(usize),
    StrayObject(String),
    NodePose(usize),
    NodePosition(usize, [i64; 3]),
    FreePose([i64; 6]),
    NodeDimension(usize, usize, bool),
    FreeNumber(i64, Unit),
    Text(String),
}

pub fn lit() -> impl Strategy<Value = Lit> {
    prop_oneof![
        (0usize..8).prop_map(Lit::NodeObject),
        "[a-z]{3,8}".prop_map(|s| Lit::StrayObject(format!("missing {s}"))),
        (0usize..8).prop_map(Lit::NodePose),
        (0usize..8, prop::array::uniform3(-3i64..3)).prop_map(|(i, r)| Lit::NodePosition(i, r)),
        prop::array::uniform6(-300i64..300).prop_map(Lit::FreePose),
        (0usize..8, 0usize..3, any::<bool>()).prop_map(|(i, a, m)| Lit::NodeDimension(i, a, m)),
        (-300i64..300, unit()).prop_map(|(n, u)| Lit::FreeNumber(n, u)),
        "[a-z ]{0,8}".prop_map(Lit::Text),
    ]
}

pub fn to_value(l: &Lit, scene: &SceneGraph) -> Value {
    let node = |i: &usize| &scene.nodes[i % scene.nodes.len()];
    match l {
        Lit::NodeObject(i) => Value::object(node(i).label.clone()),
        Lit::StrayObject(s) => Value::object(s.clone()),
        Lit::NodePose(i) => Value::pose(node(i).pose),
        Lit::NodePosition(i, r) => {
            let p = node(i).pose.position;
            Value::pose(Pose::new(p[0], p[1], p[2], r[0] as f64 * 0.25, r[1] as f64 * 0.25, r[2] as f64 * 0.25))
        }
        Lit::FreePose(a) => {
            let c = |k: usize| a[k] as f64 / 100.0;
            Value::pose(Pose::new(c(0), c(1), c(2), c(3), c(4), c(5)))
        }
        Lit::NodeDimension(i, axis, meters) => {
            let d = node(i).dimensions[*axis];
            if *meters {
                Value::meters(d)
            } else {
                Value::number(d)
            }
        }
        Lit::FreeNumber(n, unit) => Value::Number { value: *n as f64 / 100.0, unit: *unit },
        Lit::Text(s) => Value::text(s.clone()),
    }
}

pub fn scene_and_program() -> impl Strategy<Value = (SceneGraph, SkillProgram)> {
    (scene(), prop::collection::vec(("[a-z_]{2,8}", prop::collection::vec(lit(), 0..4)), 1..7)).prop_map(
        |(scene, calls)| {
            let calls = calls
                .into_iter()
                .map(|(skill, lits)| SkillCall::new(skill, lits.iter().map(|l| to_value(l, &scene)).collect()))
                .collect();
            (scene, SkillProgram::new(calls))
        },
    )
}

/// `n` pairs drawn from a fixed-seed runner.
pub fn sample_pairs(n: usize) -> Vec<(SceneGraph, SkillProgram)> {
    let mut runner = TestRunner::deterministic();
    let strategy = scene_and_program();
    (0..n).map(|_| strategy.new_tree(&mut runner).expect("generator never rejects").current()).collect()
}
