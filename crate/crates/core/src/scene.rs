//! Scene graphs: labeled object nodes with poses plus natural-language
//! relation edges extracted from a world observation.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::simenv::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub label: String,
    pub class: String,
    pub pose: Pose,
    /// Full box extents along the body axes, meters.
    pub dimensions: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEdge {
    pub subject: String,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

impl SceneEdge {
    pub fn new(subject: &str, relation: &str, object: Option<&str>) -> Self {
        SceneEdge { subject: subject.to_string(), relation: relation.to_string(), object: object.map(str::to_string) }
    }

    /// "the cube is on the plate", "the toaster door is closed".
    pub fn text(&self) -> String {
        match &self.object {
            Some(o) => format!("the {} {} the {}", self.subject, self.relation, o),
            None => format!("the {} {}", self.subject, self.relation),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<SceneNode>,
    pub edges: Vec<SceneEdge>,
    pub gripper: Pose,
    #[serde(skip)]
    pub raw: Option<Arc<World>>,
}

impl PartialEq for SceneGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.gripper == other.gripper
    }
}

impl SceneGraph {
    pub fn new(nodes: Vec<SceneNode>, edges: Vec<SceneEdge>, gripper: Pose) -> Self {
        SceneGraph { nodes, edges, gripper, raw: None }
    }

    pub fn node(&self, label: &str) -> Option<&SceneNode> {
        self.nodes.iter().find(|n| n.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.label.as_str())
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.node(label).is_some()
    }

    /// Canonical digest used for state-conditioned embedding keys:
    /// sorted `label@(x,y,z)` entries followed by sorted relation texts.
    pub fn digest(&self) -> String {
        let mut nodes: Vec<String> = self
            .nodes
            .iter()
            .map(|n| {
                let [x, y, z] = n.pose.position;
                format!("{}@({:.2},{:.2},{:.2})", n.label, x, y, z)
            })
            .collect();
        nodes.sort();
        let mut edges: Vec<String> = self.edges.iter().map(SceneEdge::text).collect();
        edges.sort();
        format!("{}; {}", nodes.join("; "), edges.join("; "))
    }

    /// Human/model-readable listing used in prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let g = self.gripper.to_array();
        let _ = writeln!(out, "gripper: pose({})", fmt_list(&g));
        out.push_str("objects:\n");
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "- {} ({}): pose({}) size {}",
                n.label,
                n.class,
                fmt_list(&n.pose.to_array()),
                fmt_list(&n.dimensions)
            );
        }
        if !self.edges.is_empty() {
            out.push_str("relations:\n");
            for e in &self.edges {
                let _ = writeln!(out, "- {}", e.text());
            }
        }
        out
    }
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}
