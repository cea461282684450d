//! Running a policy tree as a controller.
//!
//! The first action is always the root's. Afterwards the controller takes
//! the baseline's best action among the current node's children and moves
//! to that child. When the current node is a leaf, or an override left the
//! tree, control is handed off according to [`LeafPolicy`].
//!
//! Randomness is keyed by episode seed and step index, so a tree-guided
//! episode and a plain baseline episode with the same seed see the same
//! initial state and the same transition noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    argmax_among, checked_scores, greedy_action, update_belief, ActionId, BaselinePolicy, Belief,
    GenerativeModel, InitialCondition, Observation, Query, StateVector, StepResult,
};
use crate::rng::{SeedStream, TAG_BELIEF, TAG_BUILD, TAG_EPISODE, TAG_INIT, TAG_RANDOM, TAG_STEP};
use crate::tree::{build_tree, BuildConfig, NodeId, PolicyTree};

/// What happens once the current tree has no further guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafPolicy {
    /// Follow the unconstrained baseline for the rest of the episode.
    #[default]
    Baseline,
    /// Build a fresh tree at the live state (or belief) and continue.
    Rebuild,
    /// Stop the episode.
    Halt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub leaf_policy: LeafPolicy,
    pub max_steps: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { leaf_policy: LeafPolicy::Baseline, max_steps: 1000 }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Constrained action selection.
///
/// `None` position means the root action has not been taken yet. Returns
/// `Ok(None)` at a leaf.
pub fn select_action(
    tree: &PolicyTree,
    position: Option<NodeId>,
    policy: &dyn BaselinePolicy,
    query: Query<'_>,
) -> Result<Option<ActionId>> {
    let Some(node) = position else {
        return Ok(Some(tree.root().action));
    };
    let children = &tree.node(node).children;
    if children.is_empty() {
        return Ok(None);
    }
    let scores = checked_scores(policy, query)?;
    Ok(argmax_among(&scores, children.iter().map(|&c| tree.node(c).action)))
}

/// The true environment state plus the controller's belief about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveEnv {
    pub state: StateVector,
    /// Present for partially observable models.
    pub belief: Option<Belief>,
    pub last_observation: Option<Observation>,
    pub step_index: usize,
    /// Undiscounted sum of rewards so far.
    pub total_return: f64,
    pub done: bool,
    seed: u64,
}

impl LiveEnv {
    /// Samples the initial state for episode `seed`.
    pub fn new(model: &dyn GenerativeModel, seed: u64) -> Result<Self> {
        let stream = SeedStream::new(seed).derive(TAG_EPISODE);
        let state = model.initial_state(&mut stream.derive(TAG_INIT).rng());
        let belief = if model.is_partially_observable() {
            Some(model.initial_belief().ok_or_else(|| {
                Error::UnsupportedEnvironment("partially observable model without an initial belief".into())
            })?)
        } else {
            None
        };
        Self::with_state(model, state, belief, seed)
    }

    pub fn with_state(
        model: &dyn GenerativeModel,
        state: StateVector,
        belief: Option<Belief>,
        seed: u64,
    ) -> Result<Self> {
        if state.len() != model.state_dim() {
            return Err(Error::DimensionMismatch { expected: model.state_dim(), actual: state.len() });
        }
        let done = model.is_terminal(&state);
        Ok(Self {
            state,
            belief,
            last_observation: model.initial_observation(),
            step_index: 0,
            total_return: 0.0,
            done,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// What the controller may condition on: the state, or the belief.
    pub fn query(&self) -> Query<'_> {
        match &self.belief {
            Some(b) => Query::Belief(b),
            None => Query::State(&self.state),
        }
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match &self.belief {
            Some(b) => InitialCondition::Belief(b.clone()),
            None => InitialCondition::State(self.state.clone()),
        }
    }

    /// Steps the true environment and updates the belief.
    pub fn advance(&mut self, model: &dyn GenerativeModel, action: ActionId) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if action.0 >= model.action_count() {
            return Err(Error::InvalidAction { action, count: model.action_count() });
        }
        let stream = SeedStream::new(self.seed).derive(TAG_EPISODE);
        let mut rng = stream.derive(TAG_STEP).derive(self.step_index as u64).rng();
        let result = model.step(&self.state, action, &mut rng);
        if let (Some(belief), Some(obs)) = (&self.belief, &result.observation) {
            let seed = stream.derive(TAG_BELIEF).derive(self.step_index as u64).value();
            self.belief = Some(update_belief(model, belief, action, obs, seed).belief);
        }
        self.state = result.next_state.clone();
        self.last_observation = result.observation.clone();
        self.step_index += 1;
        self.total_return += result.reward;
        self.done = result.done;
        Ok(result)
    }
}

/// Where the controller is relative to its current tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "node")]
pub enum Position {
    /// Fresh tree, root action not yet taken.
    Pending,
    At(NodeId),
    /// The last action was not a child of the current node.
    OffTree,
    /// Following the baseline after hand-off.
    Baseline,
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Root,
    Tree,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub action: ActionId,
    pub source: ActionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub action: ActionId,
    pub reward: f64,
    /// Tree node entered by this action, if it stayed on the tree.
    pub node: Option<NodeId>,
    /// How many rebuilds preceded this step.
    pub generation: usize,
}

/// A live tree-guided episode.
#[derive(Debug, Clone)]
pub struct ExecutionState {
    pub env: LiveEnv,
    pub tree: PolicyTree,
    pub position: Position,
    pub trace: Vec<TraceEntry>,
    /// Depth of the node at which each tree was abandoned.
    pub exit_depths: Vec<usize>,
    pub rebuilds: usize,
    build: BuildConfig,
    controller: ControllerConfig,
}

/// Seed for the tree built after `generation` rebuilds of episode `seed`.
pub fn build_seed(seed: u64, generation: usize) -> u64 {
    SeedStream::new(seed).derive(TAG_EPISODE).derive(TAG_BUILD).derive(generation as u64).value()
}

impl ExecutionState {
    /// Samples the initial state for `seed` and builds the first tree.
    pub fn start(
        model: &dyn GenerativeModel,
        policy: &dyn BaselinePolicy,
        build: &BuildConfig,
        controller: &ControllerConfig,
        seed: u64,
    ) -> Result<Self> {
        Self::from_env(model, policy, LiveEnv::new(model, seed)?, build, controller)
    }

    pub fn from_env(
        model: &dyn GenerativeModel,
        policy: &dyn BaselinePolicy,
        env: LiveEnv,
        build: &BuildConfig,
        controller: &ControllerConfig,
    ) -> Result<Self> {
        controller.validate()?;
        if env.done {
            return Err(Error::TerminalInitialState);
        }
        let cfg = BuildConfig { seed: build_seed(env.seed, 0), ..build.clone() };
        let tree = build_tree(model, policy, env.initial_condition(), &cfg)?;
        Ok(Self {
            env,
            tree,
            position: Position::Pending,
            trace: Vec::new(),
            exit_depths: Vec::new(),
            rebuilds: 0,
            build: build.clone(),
            controller: controller.clone(),
        })
    }

    pub fn controller(&self) -> &ControllerConfig {
        &self.controller
    }

    pub fn build_config(&self) -> &BuildConfig {
        &self.build
    }

    pub fn is_finished(&self) -> bool {
        self.env.done || self.env.step_index >= self.controller.max_steps || self.position == Position::Halted
    }

    /// Whether the current tree has run out of guidance.
    pub fn needs_handoff(&self) -> bool {
        match self.position {
            Position::At(n) => self.tree.node(n).is_leaf(),
            Position::OffTree => true,
            _ => false,
        }
    }

    /// Applies the leaf policy if the tree is exhausted. Returns whether a
    /// new tree was built.
    pub fn refresh(&mut self, model: &dyn GenerativeModel, policy: &dyn BaselinePolicy) -> Result<bool> {
        if !self.needs_handoff() || self.is_finished() {
            return Ok(false);
        }
        let depth = match self.position {
            Position::At(n) => self.tree.node(n).depth,
            _ => self.trace.iter().rev().find_map(|t| t.node).map_or(0, |n| self.tree.node(n).depth),
        };
        self.exit_depths.push(depth);
        match self.controller.leaf_policy {
            LeafPolicy::Baseline => {
                self.position = Position::Baseline;
                Ok(false)
            }
            LeafPolicy::Halt => {
                self.position = Position::Halted;
                Ok(false)
            }
            LeafPolicy::Rebuild => {
                let cfg = BuildConfig { seed: build_seed(self.env.seed, self.rebuilds + 1), ..self.build.clone() };
                match build_tree(model, policy, self.env.initial_condition(), &cfg) {
                    Ok(tree) => {
                        self.tree = tree;
                        self.rebuilds += 1;
                        self.position = Position::Pending;
                        Ok(true)
                    }
                    // Every belief hypothesis is terminal while the true state
                    // is not; there is nothing to plan over.
                    Err(Error::TerminalInitialState) => {
                        self.position = Position::Baseline;
                        Ok(false)
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Next action to take, or `None` once the episode is over or halted.
    pub fn recommend(
        &mut self,
        model: &dyn GenerativeModel,
        policy: &dyn BaselinePolicy,
    ) -> Result<Option<Recommendation>> {
        self.refresh(model, policy)?;
        if self.is_finished() {
            return Ok(None);
        }
        let query = self.env.query();
        let rec = match self.position {
            Position::Pending => Recommendation { action: self.tree.root().action, source: ActionSource::Root },
            Position::At(n) => {
                let action = select_action(&self.tree, Some(n), policy, query)?
                    .expect("refresh hands off at leaves");
                Recommendation { action, source: ActionSource::Tree }
            }
            Position::Baseline => {
                Recommendation { action: greedy_action(policy, query)?, source: ActionSource::Baseline }
            }
            Position::OffTree | Position::Halted => unreachable!("handled by refresh"),
        };
        Ok(Some(rec))
    }

    /// Takes `action` (recommended or not) in the live environment.
    pub fn apply(&mut self, model: &dyn GenerativeModel, action: ActionId) -> Result<StepResult> {
        if self.is_finished() {
            return Err(Error::EpisodeFinished);
        }
        let result = self.env.advance(model, action)?;
        let node = match self.position {
            Position::Pending if action == self.tree.root().action => Some(PolicyTree::ROOT),
            Position::At(n) => self.tree.child_with_action(n, action),
            _ => None,
        };
        self.position = match (self.position, node) {
            (Position::Baseline, _) => Position::Baseline,
            (_, Some(n)) => Position::At(n),
            (_, None) => Position::OffTree,
        };
        self.trace.push(TraceEntry {
            step: self.env.step_index - 1,
            action,
            reward: result.reward,
            node,
            generation: self.rebuilds,
        });
        Ok(result)
    }

    /// `recommend` followed by `apply`. `Ok(None)` once finished.
    pub fn step(
        &mut self,
        model: &dyn GenerativeModel,
        policy: &dyn BaselinePolicy,
    ) -> Result<Option<(Recommendation, StepResult)>> {
        match self.recommend(model, policy)? {
            Some(rec) => Ok(Some((rec, self.apply(model, rec.action)?))),
            None => Ok(None),
        }
    }
}

/// Summary of one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub total_return: f64,
    pub steps: usize,
    pub actions: Vec<ActionId>,
    /// Mean leaf depth of the first tree; `None` for tree-free episodes.
    pub tree_leaf_depth: Option<f64>,
    pub exit_depths: Vec<usize>,
    pub rebuilds: usize,
    pub terminated: bool,
}

/// Runs a tree-guided episode to completion.
pub fn run_episode(
    model: &dyn GenerativeModel,
    policy: &dyn BaselinePolicy,
    build: &BuildConfig,
    controller: &ControllerConfig,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut exec = ExecutionState::start(model, policy, build, controller, seed)?;
    let tree_leaf_depth = Some(exec.tree.mean_leaf_depth());
    while exec.step(model, policy)?.is_some() {}
    Ok(EpisodeRecord {
        seed,
        total_return: exec.env.total_return,
        steps: exec.env.step_index,
        actions: exec.trace.iter().map(|t| t.action).collect(),
        tree_leaf_depth,
        exit_depths: exec.exit_depths,
        rebuilds: exec.rebuilds,
        terminated: exec.env.done,
    })
}

fn run_with(
    model: &dyn GenerativeModel,
    max_steps: usize,
    seed: u64,
    mut choose: impl FnMut(&LiveEnv) -> Result<ActionId>,
) -> Result<EpisodeRecord> {
    let mut env = LiveEnv::new(model, seed)?;
    let mut actions = Vec::new();
    while !env.done && env.step_index < max_steps {
        let a = choose(&env)?;
        env.advance(model, a)?;
        actions.push(a);
    }
    Ok(EpisodeRecord {
        seed,
        total_return: env.total_return,
        steps: env.step_index,
        actions,
        tree_leaf_depth: None,
        exit_depths: Vec::new(),
        rebuilds: 0,
        terminated: env.done,
    })
}

/// The baseline's greedy policy on the same seed as [`run_episode`].
pub fn run_baseline_episode(
    model: &dyn GenerativeModel,
    policy: &dyn BaselinePolicy,
    max_steps: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    run_with(model, max_steps, seed, |env| greedy_action(policy, env.query()))
}

/// Uniformly random actions on the same seed as [`run_episode`].
pub fn run_random_episode(model: &dyn GenerativeModel, max_steps: usize, seed: u64) -> Result<EpisodeRecord> {
    let mut rng = SeedStream::new(seed).derive(TAG_EPISODE).derive(TAG_RANDOM).rng();
    let n = model.action_count();
    run_with(model, max_steps, seed, |_| Ok(ActionId(rng.random_range(0..n))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{solve, TablePolicy};
    use crate::env::{GridWorld, GridWorldParams};
    use crate::mdp::ScoreKind;
    use std::sync::Arc;

    struct Fixed(Vec<f64>);

    impl BaselinePolicy for Fixed {
        fn score_kind(&self) -> ScoreKind {
            ScoreKind::ActionValue
        }
        fn action_count(&self) -> usize {
            self.0.len()
        }
        fn input_dim(&self) -> usize {
            3
        }
        fn scores(&self, _: Query<'_>) -> Vec<f64> {
            self.0.clone()
        }
    }

    fn corridor() -> (Arc<GridWorld>, TablePolicy) {
        let g = Arc::new(GridWorld::new(GridWorldParams::corridor(3)).unwrap());
        let (t, _) = solve(g.as_ref(), 1e-12, 1000).unwrap();
        let pol = TablePolicy::new(t, g.clone()).unwrap();
        (g, pol)
    }

    fn small_build() -> BuildConfig {
        BuildConfig { n_particles: 20, n_min: 5, ..Default::default() }
    }

    #[test]
    fn constrained_selection() {
        let (g, pol) = corridor();
        let tree = build_tree(g.as_ref(), &pol, InitialCondition::State(g.start_state()), &small_build()).unwrap();
        let q = Fixed(vec![0.9, 0.1, 0.5, 0.8, 0.2, 0.6]);
        let s = g.start_state();
        // Root rule ignores the scores.
        assert_eq!(select_action(&tree, None, &q, Query::State(&s)).unwrap(), Some(tree.root().action));
        let mut t = tree.clone();
        let leaf = t.nodes[0].children[0];
        t.nodes[leaf].children.clear();
        t.nodes[0].children = vec![leaf];
        t.nodes[leaf].action = ActionId(4);
        assert_eq!(select_action(&t, Some(0), &q, Query::State(&s)).unwrap(), Some(ActionId(4)));
        assert_eq!(select_action(&t, Some(leaf), &q, Query::State(&s)).unwrap(), None);
    }

    #[test]
    fn corridor_episode_returns_eight() {
        let (g, pol) = corridor();
        let rec = run_episode(g.as_ref(), &pol, &small_build(), &ControllerConfig::default(), 0).unwrap();
        assert_eq!(rec.total_return, 8.0);
        assert_eq!(rec.actions, vec![ActionId(1), ActionId(1)]);
        let base = run_baseline_episode(g.as_ref(), &pol, 100, 0).unwrap();
        assert_eq!(base.total_return, 8.0);
    }

    #[test]
    fn single_step_budget_takes_root_action() {
        let (g, pol) = corridor();
        let ctl = ControllerConfig { max_steps: 1, ..Default::default() };
        let rec = run_episode(g.as_ref(), &pol, &small_build(), &ctl, 4).unwrap();
        assert_eq!(rec.steps, 1);
        assert_eq!(rec.actions, vec![ActionId(1)]);
    }

    #[test]
    fn baseline_fallback_after_leaf() {
        let g = GridWorld::new(GridWorldParams { p_success: 1.0, ..Default::default() }).unwrap();
        let g = Arc::new(g);
        let (t, _) = solve(g.as_ref(), 1e-10, 100_000).unwrap();
        let pol = TablePolicy::new(t, g.clone()).unwrap();
        let build = BuildConfig { n_particles: 10, n_min: 5, d_max: 2, ..Default::default() };
        let mut exec = ExecutionState::start(g.as_ref(), &pol, &build, &ControllerConfig::default(), 1).unwrap();
        let mut sources = Vec::new();
        while let Some((rec, _)) = exec.step(g.as_ref(), &pol).unwrap() {
            if rec.source == ActionSource::Baseline {
                assert_eq!(rec.action, greedy_action(&pol, Query::State(&exec.trace_state_before_last())).unwrap());
            }
            sources.push(rec.source);
        }
        assert_eq!(&sources[..3], &[ActionSource::Root, ActionSource::Tree, ActionSource::Tree]);
        assert!(sources[3..].iter().all(|s| *s == ActionSource::Baseline));
        assert_eq!(exec.exit_depths, vec![2]);
    }

    impl ExecutionState {
        /// Replays the trace on a fresh environment to recover the state
        /// before the last action.
        fn trace_state_before_last(&self) -> StateVector {
            let g = GridWorld::new(GridWorldParams { p_success: 1.0, ..Default::default() }).unwrap();
            let mut env = LiveEnv::new(&g, self.env.seed()).unwrap();
            for t in &self.trace[..self.trace.len() - 1] {
                env.advance(&g, t.action).unwrap();
            }
            env.state
        }
    }

    #[test]
    fn override_off_tree_triggers_rebuild() {
        let (g, pol) = corridor();
        let ctl = ControllerConfig { leaf_policy: LeafPolicy::Rebuild, max_steps: 50 };
        let mut exec = ExecutionState::start(g.as_ref(), &pol, &small_build(), &ctl, 2).unwrap();
        exec.apply(g.as_ref(), ActionId(3)).unwrap();
        assert_eq!(exec.position, Position::OffTree);
        assert!(exec.refresh(g.as_ref(), &pol).unwrap());
        assert_eq!(exec.position, Position::Pending);
        assert_eq!(exec.tree.root().reach_probability, 1.0);
        assert_eq!(exec.rebuilds, 1);
    }

    #[test]
    fn halt_stops_at_leaf() {
        let g = Arc::new(GridWorld::new(GridWorldParams::corridor(6)).unwrap());
        let (t, _) = solve(g.as_ref(), 1e-12, 1000).unwrap();
        let pol = TablePolicy::new(t, g.clone()).unwrap();
        let build = BuildConfig { d_max: 1, ..small_build() };
        let ctl = ControllerConfig { leaf_policy: LeafPolicy::Halt, max_steps: 50 };
        let rec = run_episode(g.as_ref(), &pol, &build, &ctl, 0).unwrap();
        assert_eq!(rec.steps, 2);
        assert_eq!(rec.exit_depths, vec![1]);
        assert!(!rec.terminated);
    }

    #[test]
    fn finished_episode_rejects_actions() {
        let (g, pol) = corridor();
        let mut exec = ExecutionState::start(g.as_ref(), &pol, &small_build(), &ControllerConfig::default(), 0).unwrap();
        while exec.step(g.as_ref(), &pol).unwrap().is_some() {}
        assert!(matches!(exec.apply(g.as_ref(), ActionId(0)), Err(Error::EpisodeFinished)));
    }
}
