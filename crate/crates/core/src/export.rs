//! Portable tree and episode documents, and Graphviz rendering.
//!
//! Documents are JSON. A `.tree` file holds one [`TreeDocument`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::TraceEntry;
use crate::mdp::{ActionId, GenerativeModel};
use crate::tree::{summarize_node_states, BuildConfig, NodeId, PolicyTree};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub action: ActionId,
    pub action_label: String,
    pub depth: usize,
    pub particle_count: usize,
    pub reach_probability: f64,
    pub value_estimate: f64,
    pub terminal_fraction: f64,
    /// Environment-rendered summary of the node's particles.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub schema_version: u32,
    pub config: BuildConfig,
    pub nodes: Vec<NodeRecord>,
    pub most_likely_path: Vec<NodeId>,
}

impl TreeDocument {
    /// Reduces each node's particle set to a count and a summary string.
    pub fn from_tree(tree: &PolicyTree, model: &dyn GenerativeModel) -> Self {
        let kind = model.summary_kind();
        let nodes = tree
            .nodes
            .iter()
            .map(|n| {
                let summary = match summarize_node_states(n, kind) {
                    Some(s) if s.support == s.total => model.describe_state(&s.values),
                    Some(s) => format!("{} [{}/{}]", model.describe_state(&s.values), s.support, s.total),
                    None => String::new(),
                };
                NodeRecord {
                    id: n.id,
                    parent: n.parent,
                    action: n.action,
                    action_label: model.action_label(n.action),
                    depth: n.depth,
                    particle_count: n.particle_count(),
                    reach_probability: n.reach_probability,
                    value_estimate: n.value_estimate,
                    terminal_fraction: n.terminal_fraction,
                    summary,
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            config: tree.config.clone(),
            nodes,
            most_likely_path: tree.most_likely_path(),
        }
    }

    /// Checks id uniqueness, parent ordering and the root probability.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        let Some(root) = self.nodes.first() else {
            return bad("document has no nodes".into());
        };
        if root.id != 0 || root.parent.is_some() || root.reach_probability != 1.0 {
            return bad("first node must be a parentless root with probability 1".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node ids must be 0..n in order, found {} at {i}", n.id));
            }
            // Pre-order numbering puts every parent before its children,
            // which also rules out cycles.
            if i > 0 && n.parent.is_none_or(|p| p >= i) {
                return bad(format!("node {i} has an invalid parent"));
            }
        }
        if self.most_likely_path.first() != Some(&0) || self.most_likely_path.iter().any(|&id| id >= self.nodes.len()) {
            return bad("most likely path must start at the root and reference existing nodes".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.iter().filter(move |n| n.parent == Some(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthScale {
    #[default]
    Linear,
    /// Logarithmic over probabilities in `[1e-3, 1]`.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DotStyle {
    pub min_width: f64,
    pub max_width: f64,
    pub scale: WidthScale,
    pub path_color: String,
    pub edge_color: String,
}

impl Default for DotStyle {
    fn default() -> Self {
        Self {
            min_width: 0.5,
            max_width: 6.0,
            scale: WidthScale::Linear,
            path_color: "blue".into(),
            edge_color: "black".into(),
        }
    }
}

impl DotStyle {
    /// Pen width for a reach probability, clamped to `[min, max]`.
    pub fn pen_width(&self, p: f64) -> f64 {
        let frac = match self.scale {
            WidthScale::Linear => p,
            WidthScale::Log => 1.0 + p.max(1e-3).log10() / 3.0,
        };
        let frac = if frac.is_nan() { 0.0 } else { frac.clamp(0.0, 1.0) };
        self.min_width + (self.max_width - self.min_width) * frac
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Node labels show action, value estimate and reach
/// probability; border and edge widths follow reach probability; edges on
/// the most likely path use `path_color`.
pub fn render_dot(doc: &TreeDocument, style: &DotStyle) -> String {
    let on_path: Vec<bool> = {
        let mut v = vec![false; doc.nodes.len()];
        doc.most_likely_path.iter().for_each(|&i| v[i] = true);
        v
    };
    let mut out = String::from("digraph policy_tree {\n  node [shape=box, style=rounded];\n");
    for n in &doc.nodes {
        let color = if on_path[n.id] { &style.path_color } else { &style.edge_color };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\\nV={:.3}  P={:.3}\", penwidth={:.3}, color={}];",
            n.id,
            escape(&n.action_label),
            n.value_estimate,
            n.reach_probability,
            style.pen_width(n.reach_probability),
            color
        );
    }
    for n in &doc.nodes {
        if let Some(p) = n.parent {
            let color = if on_path[n.id] && on_path[p] { &style.path_color } else { &style.edge_color };
            let _ = writeln!(
                out,
                "  n{p} -> n{} [penwidth={:.3}, color={}];",
                n.id,
                style.pen_width(n.reach_probability),
                color
            );
        }
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub step: usize,
    pub action: ActionId,
    pub action_label: String,
    pub reward: f64,
    pub node: Option<NodeId>,
    pub generation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDocument {
    pub schema_version: u32,
    pub seed: u64,
    pub total_return: f64,
    pub steps: Vec<EpisodeStep>,
}

impl EpisodeDocument {
    pub fn from_trace(seed: u64, trace: &[TraceEntry], model: &dyn GenerativeModel) -> Self {
        let steps: Vec<EpisodeStep> = trace
            .iter()
            .map(|t| EpisodeStep {
                step: t.step,
                action: t.action,
                action_label: model.action_label(t.action),
                reward: t.reward,
                node: t.node,
                generation: t.generation,
            })
            .collect();
        Self { schema_version: SCHEMA_VERSION, seed, total_return: steps.iter().map(|s| s.reward).sum(), steps }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{solve, TablePolicy};
    use crate::env::{GridWorld, GridWorldParams};
    use crate::mdp::InitialCondition;
    use crate::tree::build_tree;
    use std::sync::Arc;

    fn corridor_doc(width: i64, d_max: usize) -> TreeDocument {
        let g = Arc::new(GridWorld::new(GridWorldParams::corridor(width)).unwrap());
        let (t, _) = solve(g.as_ref(), 1e-12, 1000).unwrap();
        let pol = TablePolicy::new(t, g.clone()).unwrap();
        let cfg = BuildConfig { n_particles: 10, n_min: 1, d_max, ..Default::default() };
        let tree = build_tree(g.as_ref(), &pol, InitialCondition::State(g.start_state()), &cfg).unwrap();
        TreeDocument::from_tree(&tree, g.as_ref())
    }

    #[test]
    fn single_node_document() {
        let doc = corridor_doc(2, 5);
        assert_eq!(doc.nodes.len(), 1);
        assert_eq!(doc.most_likely_path, vec![0]);
        assert_eq!(doc.nodes[0].action_label, "E1");
    }

    #[test]
    fn chain_renders_highlighted_path() {
        let doc = corridor_doc(6, 2);
        let dot = render_dot(&doc, &DotStyle::default());
        assert_eq!(dot.matches(" -> ").count(), 2);
        assert_eq!(dot.matches("color=blue];").count(), 5);
        assert!(dot.contains("n0 [label=\"E1\\nV=5.000  P=1.000\", penwidth=6.000"));
    }

    #[test]
    fn json_round_trip() {
        let doc = corridor_doc(6, 3);
        let back = TreeDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn pen_width_clamps() {
        let s = DotStyle::default();
        assert_eq!(s.pen_width(1.0), 6.0);
        assert_eq!(s.pen_width(0.0), 0.5);
        assert_eq!(s.pen_width(2.0), 6.0);
        let log = DotStyle { scale: WidthScale::Log, ..Default::default() };
        assert_eq!(log.pen_width(1e-6), 0.5);
        assert!((log.pen_width(0.1) - (0.5 + 5.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_broken_documents() {
        let mut doc = corridor_doc(6, 2);
        doc.nodes[1].parent = Some(2);
        assert!(doc.validate().is_err());
        let mut doc = corridor_doc(6, 2);
        doc.schema_version = 9;
        assert!(doc.validate().is_err());
    }
}
