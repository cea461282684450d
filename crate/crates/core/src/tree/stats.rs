//! Node statistics: reach probability, value estimate, most likely path and
//! state summaries.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{checked_scores, BaselinePolicy, SummaryKind};
use crate::par;

use super::{ActionNode, PolicyTree};

/// Fills in reach probability and value estimate for every node and marks
/// the most likely root-to-leaf path.
///
/// Reach probability is the node's share of the initial particles. The value
/// estimate is the mean baseline score of the node's action over its
/// particles. The likely path descends to the child with the highest reach
/// probability, ties to the lowest action id.
pub fn annotate_statistics(tree: &mut PolicyTree, policy: &dyn BaselinePolicy) -> Result<()> {
    let n_initial = tree.stats.n_initial as f64;
    let exec = tree.config.execution;
    for node in tree.nodes.iter_mut() {
        node.reach_probability = node.particles.len() as f64 / n_initial;
        let action = node.action.0;
        let values = par::map_slice(&node.particles, exec, |p| checked_scores(policy, p.query()).map(|s| s[action]));
        let mut sum = 0.0;
        for v in values {
            sum += v?;
        }
        node.value_estimate = if node.particles.is_empty() { 0.0 } else { sum / node.particles.len() as f64 };
        node.on_likely_path = false;
    }
    let mut cur = PolicyTree::ROOT;
    tree.nodes[cur].on_likely_path = true;
    loop {
        let best = tree.nodes[cur].children.iter().copied().max_by(|&a, &b| {
            let (na, nb) = (&tree.nodes[a], &tree.nodes[b]);
            na.reach_probability
                .total_cmp(&nb.reach_probability)
                .then(nb.action.cmp(&na.action))
        });
        match best {
            Some(next) => {
                tree.nodes[next].on_likely_path = true;
                cur = next;
            }
            None => break,
        }
    }
    Ok(())
}

/// Condensed view of a node's particle set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub kind: SummaryKind,
    pub values: Vec<f64>,
    /// Particles matching `values` exactly (mode kinds); all particles for the
    /// mean.
    pub support: usize,
    pub total: usize,
}

/// Summarizes the states (or observations) held by `node`.
///
/// Returns `None` for an empty node, or when observations are requested but
/// the particles carry none.
pub fn summarize_node_states(node: &ActionNode, kind: SummaryKind) -> Option<StateSummary> {
    let total = node.particles.len();
    if total == 0 {
        return None;
    }
    match kind {
        SummaryKind::Mean => {
            let dim = node.particles[0].state.len();
            let mut mean = vec![0.0; dim];
            for p in &node.particles {
                for (m, v) in mean.iter_mut().zip(p.state.iter()) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= total as f64);
            Some(StateSummary { kind, values: mean, support: total, total })
        }
        SummaryKind::Mode => {
            let (values, support) = mode(node.particles.iter().map(|p| p.state.as_slice()))?;
            Some(StateSummary { kind, values, support, total })
        }
        SummaryKind::Observation => {
            let obs: Vec<&[f64]> = node.particles.iter().filter_map(|p| p.observation.as_deref()).collect();
            let (values, support) = mode(obs.into_iter())?;
            Some(StateSummary { kind, values, support, total })
        }
    }
}

/// Most frequent vector by exact bit equality; ties go to the first seen.
fn mode<'a>(items: impl Iterator<Item = &'a [f64]>) -> Option<(Vec<f64>, usize)> {
    let mut counts: Vec<(Vec<u64>, &'a [f64], usize)> = Vec::new();
    let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    for v in items {
        let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        match index.get(&key) {
            Some(&i) => counts[i].2 += 1,
            None => {
                index.insert(key.clone(), counts.len());
                counts.push((key, v, 1));
            }
        }
    }
    let mut best: Option<(&[f64], usize)> = None;
    for (_, v, c) in &counts {
        if best.is_none_or(|(_, bc)| *c > bc) {
            best = Some((v, *c));
        }
    }
    best.map(|(v, c)| (v.to_vec(), c))
}
