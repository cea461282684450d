//! Local policy trees.
//!
//! A tree is grown from a single state or belief by pushing a particle set
//! through the generative model under the baseline policy. After each
//! simulated step the surviving particles are clustered by greedy action and
//! every cluster becomes a child node. Nodes that are too small or too deep
//! stay leaves.

pub mod cluster;
pub mod stats;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    checked_scores, greedy_action, sample_initial_particles, update_belief, ActionId, BaselinePolicy,
    GenerativeModel, InitialCondition, Particle,
};
use crate::par::{self, Execution};
use crate::rng::{SeedStream, TAG_BELIEF, TAG_BUILD, TAG_STEP};

pub use cluster::{
    cluster, distance, greedy_cluster, unique_actions, Clustering, DeltaAggregation, ScoredSet,
};
pub use stats::{annotate_statistics, summarize_node_states, StateSummary};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub n_particles: usize,
    pub n_min: usize,
    pub d_max: usize,
    pub delta_star: f64,
    pub c_max: usize,
    pub seed: u64,
    pub delta_aggregation: DeltaAggregation,
    pub execution: Execution,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            n_min: 250,
            d_max: 10,
            delta_star: 0.01,
            c_max: 4,
            seed: 0,
            delta_aggregation: DeltaAggregation::Mean,
            execution: Execution::Parallel,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_particles == 0 {
            return fail("n_particles must be positive");
        }
        if self.n_min == 0 || self.n_min > self.n_particles {
            return fail("n_min must be in 1..=n_particles");
        }
        if self.d_max == 0 {
            return fail("d_max must be positive");
        }
        if !self.delta_star.is_finite() || self.delta_star < 0.0 {
            return fail("delta_star must be a finite non-negative number");
        }
        if self.c_max == 0 {
            return fail("c_max must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub action: ActionId,
    pub depth: usize,
    pub particles: Vec<Particle>,
    pub children: Vec<NodeId>,
    /// Whether the node's particles were stepped.
    pub expanded: bool,
    /// Rewards of particles that terminated when this node's action was
    /// applied. They do not reach any child.
    pub terminal_rewards: Vec<f64>,
    pub reach_probability: f64,
    pub value_estimate: f64,
    pub terminal_fraction: f64,
    pub on_likely_path: bool,
    /// Baseline score vector at the initial query (root only).
    pub root_scores: Option<Vec<f64>>,
}

impl ActionNode {
    fn new(id: NodeId, parent: Option<NodeId>, action: ActionId, depth: usize, particles: Vec<Particle>) -> Self {
        Self {
            id,
            parent,
            action,
            depth,
            particles,
            children: Vec::new(),
            expanded: false,
            terminal_rewards: Vec::new(),
            reach_probability: 0.0,
            value_estimate: 0.0,
            terminal_fraction: 0.0,
            on_likely_path: false,
            root_scores: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn particle_count(&self) -> usize {
        self.particles.len()
    }

    pub fn terminated_count(&self) -> usize {
        self.terminal_rewards.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub n_initial: usize,
    pub particle_steps: usize,
    pub node_count: usize,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?.max(0.0)))
    }
}

/// Arena-backed policy tree. Node ids are assigned in depth-first pre-order,
/// so a parent's id is always smaller than its children's.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTree {
    pub nodes: Vec<ActionNode>,
    pub config: BuildConfig,
    pub initial: InitialCondition,
    pub stats: BuildStats,
}

impl PolicyTree {
    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &ActionNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &ActionNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = &ActionNode> {
        self.nodes[id].children.iter().map(|&c| &self.nodes[c])
    }

    pub fn child_with_action(&self, id: NodeId, action: ActionId) -> Option<NodeId> {
        self.nodes[id].children.iter().copied().find(|&c| self.nodes[c].action == action)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &ActionNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Unweighted mean depth over all leaves.
    pub fn mean_leaf_depth(&self) -> f64 {
        let (sum, count) = self.leaves().fold((0usize, 0usize), |(s, c), n| (s + n.depth, c + 1));
        sum as f64 / count as f64
    }

    /// Node ids flagged by [`annotate_statistics`] as the most likely path.
    pub fn most_likely_path(&self) -> Vec<NodeId> {
        let mut path = vec![Self::ROOT];
        let mut cur = Self::ROOT;
        while let Some(next) = self.nodes[cur].children.iter().copied().find(|&c| self.nodes[c].on_likely_path) {
            path.push(next);
            cur = next;
        }
        path
    }

    /// Action sequence of every root-to-leaf path.
    pub fn action_paths(&self) -> Vec<Vec<ActionId>> {
        let mut out = Vec::new();
        let mut stack = vec![(Self::ROOT, vec![self.root().action])];
        while let Some((id, path)) = stack.pop() {
            let node = &self.nodes[id];
            if node.is_leaf() {
                out.push(path);
                continue;
            }
            for &c in node.children.iter().rev() {
                let mut p = path.clone();
                p.push(self.nodes[c].action);
                stack.push((c, p));
            }
        }
        out
    }

    /// Whether `actions` is a prefix of some root-to-leaf action path.
    pub fn is_path_prefix(&self, actions: &[ActionId]) -> bool {
        let Some((&first, rest)) = actions.split_first() else {
            return true;
        };
        if first != self.root().action {
            return false;
        }
        let mut cur = Self::ROOT;
        for &a in rest {
            match self.child_with_action(cur, a) {
                Some(c) => cur = c,
                None => return false,
            }
        }
        true
    }
}

/// Builds a policy tree for `initial` under `policy`.
pub fn build_tree(
    model: &dyn GenerativeModel,
    policy: &dyn BaselinePolicy,
    initial: InitialCondition,
    config: &BuildConfig,
) -> Result<PolicyTree> {
    config.validate()?;
    let started = Instant::now();
    let terminal = match &initial {
        InitialCondition::State(s) => {
            if s.len() != model.state_dim() {
                return Err(Error::DimensionMismatch { expected: model.state_dim(), actual: s.len() });
            }
            model.is_terminal(s)
        }
        InitialCondition::Belief(b) => b.iter().filter(|(_, w)| *w > 0.0).all(|(s, _)| model.is_terminal(s)),
    };
    if terminal {
        return Err(Error::TerminalInitialState);
    }
    let root_scores = checked_scores(policy, initial.as_query())?;
    let root_action = greedy_action(policy, initial.as_query())?;
    let particles = sample_initial_particles(model, &initial, config.n_particles, config.seed)?;

    let mut root = ActionNode::new(PolicyTree::ROOT, None, root_action, 0, particles);
    root.root_scores = Some(root_scores);
    let mut tree = PolicyTree {
        nodes: vec![root],
        config: config.clone(),
        initial,
        stats: BuildStats {
            n_initial: config.n_particles,
            particle_steps: 0,
            node_count: 1,
            wall_time: Duration::ZERO,
        },
    };
    rollout(&mut tree, PolicyTree::ROOT, model, policy)?;
    annotate_statistics(&mut tree, policy)?;
    tree.stats.node_count = tree.nodes.len();
    tree.stats.wall_time = started.elapsed();
    Ok(tree)
}

/// Expands `node` and, recursively, every child it produces.
///
/// A node is expanded when it holds at least `n_min` particles and sits above
/// `d_max`. Each particle is stepped with the node's action; terminated
/// particles are recorded on the node and the rest are clustered into
/// children. Nodes that already have children are left untouched.
pub fn rollout(
    tree: &mut PolicyTree,
    node: NodeId,
    model: &dyn GenerativeModel,
    policy: &dyn BaselinePolicy,
) -> Result<()> {
    let config = tree.config.clone();
    let stream = SeedStream::new(config.seed).derive(TAG_BUILD);
    let mut pending = vec![node];
    // Explicit stack in reverse child order keeps ids in DFS pre-order.
    while let Some(id) = pending.pop() {
        let n = &tree.nodes[id];
        if !n.children.is_empty() || n.particles.len() < config.n_min || n.depth >= config.d_max {
            continue;
        }
        let depth = n.depth;
        let action = n.action;
        let gamma = model.discount();
        let partial = model.is_partially_observable();
        let stepped: Vec<Result<Particle, f64>> =
            par::map_slice(&n.particles, config.execution, |p| {
                let key = stream.derive(p.id).derive(depth as u64);
                let mut rng = key.derive(TAG_STEP).rng();
                let out = model.step(&p.state, action, &mut rng);
                if out.done {
                    return Err(out.reward);
                }
                let belief = match (partial, &p.belief, &out.observation) {
                    (true, Some(b), Some(o)) => {
                        let seed = key.derive(TAG_BELIEF).value();
                        Some(Arc::new(update_belief(model, b, action, o, seed).belief))
                    }
                    _ => p.belief.clone(),
                };
                Ok(Particle {
                    id: p.id,
                    state: out.next_state,
                    reward: out.reward,
                    observation: out.observation,
                    belief,
                    cumulative_discount: p.cumulative_discount * gamma,
                })
            });
        tree.stats.particle_steps += stepped.len();

        let total = stepped.len();
        let mut survivors = Vec::with_capacity(total);
        let mut terminal_rewards = Vec::new();
        for s in stepped {
            match s {
                Ok(p) => survivors.push(p),
                Err(r) => terminal_rewards.push(r),
            }
        }
        {
            let n = &mut tree.nodes[id];
            n.expanded = true;
            n.terminal_fraction = terminal_rewards.len() as f64 / total as f64;
            n.terminal_rewards = terminal_rewards;
        }
        if survivors.is_empty() {
            continue;
        }
        let scored = ScoredSet::compute(&survivors, policy, config.execution)?;
        let clustering =
            cluster::cluster_scored(&scored, config.delta_star, config.c_max, config.delta_aggregation);
        let mut new_ids = Vec::with_capacity(clustering.len());
        for (action, members) in cluster::split(survivors, &clustering) {
            let child_id = tree.nodes.len();
            tree.nodes.push(ActionNode::new(child_id, Some(id), action, depth + 1, members));
            new_ids.push(child_id);
        }
        tree.nodes[id].children = new_ids.clone();
        pending.extend(new_ids.into_iter().rev());
    }
    renumber_preorder(tree);
    Ok(())
}

/// Children are allocated breadth-wise per expansion; this restores
/// depth-first pre-order ids so that emission order is stable and readable.
fn renumber_preorder(tree: &mut PolicyTree) {
    let mut order = Vec::with_capacity(tree.nodes.len());
    let mut stack = vec![PolicyTree::ROOT];
    while let Some(id) = stack.pop() {
        order.push(id);
        stack.extend(tree.nodes[id].children.iter().rev().copied());
    }
    if order.iter().enumerate().all(|(i, &id)| i == id) {
        return;
    }
    let mut new_id = vec![0; tree.nodes.len()];
    for (i, &old) in order.iter().enumerate() {
        new_id[old] = i;
    }
    let mut slots: Vec<Option<ActionNode>> = std::mem::take(&mut tree.nodes).into_iter().map(Some).collect();
    tree.nodes = order
        .iter()
        .map(|&old| {
            let mut n = slots[old].take().expect("node visited twice");
            n.id = new_id[old];
            n.parent = n.parent.map(|p| new_id[p]);
            for c in n.children.iter_mut() {
                *c = new_id[*c];
            }
            n
        })
        .collect();
}
