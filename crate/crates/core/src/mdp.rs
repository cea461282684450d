//! Environment and policy contracts shared by every other module.
//!
//! Environments are stateless transition functions ([`GenerativeModel`]) over
//! explicit [`StateVector`] values. Baseline policies ([`BaselinePolicy`])
//! expose a score per action for a state (MDPs) or a belief (POMDPs).

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::{SeedStream, SimRng, TAG_INIT, TAG_RESAMPLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

real_vector!(
    /// Environment state. Discrete environments encode coordinates and
    /// categorical slots as reals.
    StateVector
);
real_vector!(Observation);

/// Weighted set of state hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    states: Vec<StateVector>,
    weights: Vec<f64>,
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

impl Belief {
    pub fn new(states: Vec<StateVector>, weights: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidBelief("belief has no particles".into()));
        }
        if states.len() != weights.len() {
            return Err(Error::InvalidBelief(format!(
                "{} states but {} weights",
                states.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidBelief("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidBelief(format!("weights sum to {total}")));
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidBelief("hypotheses differ in dimension".into()));
        }
        Ok(Self { states, weights })
    }

    pub fn uniform(states: Vec<StateVector>) -> Result<Self> {
        let n = states.len().max(1);
        Self::new(states, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(state: StateVector) -> Self {
        Self { states: vec![state], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateVector, f64)> {
        self.states.iter().zip(self.weights.iter().copied())
    }

    /// Weighted component-wise mean of the hypotheses.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (s, w) in self.iter() {
            for (o, v) in out.iter_mut().zip(s.iter()) {
                *o += w * v;
            }
        }
        out
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Draws a hypothesis index proportional to weight.
    pub fn sample_index(&self, rng: &mut SimRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

/// Owned query point: a state for MDPs, a belief for POMDPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    State(StateVector),
    Belief(Belief),
}

impl InitialCondition {
    pub fn as_query(&self) -> Query<'_> {
        match self {
            InitialCondition::State(s) => Query::State(s),
            InitialCondition::Belief(b) => Query::Belief(b),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    State(&'a StateVector),
    Belief(&'a Belief),
}

impl Query<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Query::State(s) => s.len(),
            Query::Belief(b) => b.dim(),
        }
    }
}

/// One simulated trajectory head.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Index of the initial particle this trajectory descends from; keys the
    /// particle's random substream.
    pub id: u64,
    pub state: StateVector,
    /// Reward received entering this step.
    pub reward: f64,
    pub observation: Option<Observation>,
    pub belief: Option<Arc<Belief>>,
    /// γ^depth.
    pub cumulative_discount: f64,
}

impl Particle {
    /// Policy query point: the belief when one is carried, else the state.
    pub fn query(&self) -> Query<'_> {
        match &self.belief {
            Some(b) => Query::Belief(b),
            None => Query::State(&self.state),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: StateVector,
    pub observation: Option<Observation>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    Full,
    Partial,
}

/// How a node's particle set is condensed for display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    /// Component-wise mean of states.
    Mean,
    /// Most frequent state.
    Mode,
    /// Most frequent observation.
    Observation,
}

/// Simulation contract for an environment.
///
/// Implementations are stateless: every call receives the state explicitly
/// and draws randomness only from the supplied generator, so identical
/// `(state, action, rng)` inputs give identical results.
pub trait GenerativeModel: Send + Sync {
    fn action_count(&self) -> usize;

    fn state_dim(&self) -> usize;

    /// γ ∈ (0, 1].
    fn discount(&self) -> f64;

    fn horizon(&self) -> Option<usize> {
        None
    }

    fn observability(&self) -> Observability {
        Observability::Full
    }

    /// Samples the true initial state.
    fn initial_state(&self, rng: &mut SimRng) -> StateVector;

    /// Initial belief for partially observable environments.
    fn initial_belief(&self) -> Option<Belief> {
        None
    }

    fn initial_observation(&self) -> Option<Observation> {
        None
    }

    fn is_terminal(&self, state: &StateVector) -> bool;

    fn step(&self, state: &StateVector, action: ActionId, rng: &mut SimRng) -> StepResult;

    /// `Z(o | s, a, s')`. Only consulted for partially observable models.
    fn observation_likelihood(
        &self,
        _state: &StateVector,
        _action: ActionId,
        _next_state: &StateVector,
        _observation: &Observation,
    ) -> f64 {
        1.0
    }

    fn action_label(&self, action: ActionId) -> String {
        format!("a{}", action.0)
    }

    fn summary_kind(&self) -> SummaryKind {
        SummaryKind::Mean
    }

    fn describe_state(&self, values: &[f64]) -> String {
        let parts: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
        format!("({})", parts.join(", "))
    }

    fn is_partially_observable(&self) -> bool {
        self.observability() == Observability::Partial
    }

    /// Exact transition model, when the state space is small enough to list.
    fn as_enumerable(&self) -> Option<&dyn crate::baselines::EnumerableMdp> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Estimated action values Q̂(s, a).
    ActionValue,
    /// Action probabilities π(a | s).
    Probability,
}

/// Contract for the policy being explained.
pub trait BaselinePolicy: Send + Sync {
    fn score_kind(&self) -> ScoreKind;

    fn action_count(&self) -> usize;

    /// Length of the state vectors the policy accepts (for beliefs, the
    /// length of each hypothesis).
    fn input_dim(&self) -> usize;

    /// Raw score vector; callers go through [`checked_scores`].
    fn scores(&self, query: Query<'_>) -> Vec<f64>;
}

/// Scores with dimension, length and finiteness checks applied.
pub fn checked_scores(policy: &dyn BaselinePolicy, query: Query<'_>) -> Result<Vec<f64>> {
    let expected = policy.input_dim();
    if query.dim() != expected {
        return Err(Error::DimensionMismatch { expected, actual: query.dim() });
    }
    let scores = policy.scores(query);
    if scores.len() != policy.action_count() {
        return Err(Error::ScoreLength { expected: policy.action_count(), actual: scores.len() });
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    Ok(scores)
}

/// Index of the largest score, ties to the lowest index.
pub fn argmax(scores: &[f64]) -> ActionId {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    ActionId(best)
}

/// Largest-scoring action among `allowed`, ties to the lowest id.
pub fn argmax_among(scores: &[f64], allowed: impl IntoIterator<Item = ActionId>) -> Option<ActionId> {
    let mut best: Option<ActionId> = None;
    for a in allowed {
        best = match best {
            None => Some(a),
            Some(b) => {
                let (va, vb) = (scores[a.0], scores[b.0]);
                if va > vb || (va == vb && a < b) {
                    Some(a)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Greedy action of the baseline policy at `query`.
pub fn greedy_action(policy: &dyn BaselinePolicy, query: Query<'_>) -> Result<ActionId> {
    checked_scores(policy, query).map(|s| argmax(&s))
}

/// Initial particle set for tree construction.
///
/// A state yields `n` identical copies with zero reward. A belief yields `n`
/// states drawn from it, each particle carrying the belief itself.
pub fn sample_initial_particles(
    model: &dyn GenerativeModel,
    initial: &InitialCondition,
    n: usize,
    seed: u64,
) -> Result<Vec<Particle>> {
    if n == 0 {
        return Err(Error::InvalidConfig("particle count must be positive".into()));
    }
    let particles = match initial {
        InitialCondition::State(s) => (0..n as u64)
            .map(|id| Particle {
                id,
                state: s.clone(),
                reward: 0.0,
                observation: None,
                belief: None,
                cumulative_discount: 1.0,
            })
            .collect(),
        InitialCondition::Belief(b) => {
            let shared = Arc::new(b.clone());
            let stream = SeedStream::new(seed).derive(TAG_INIT);
            let obs = model.initial_observation();
            (0..n as u64)
                .map(|id| {
                    let mut rng = stream.derive(id).rng();
                    let idx = b.sample_index(&mut rng);
                    Particle {
                        id,
                        state: b.states()[idx].clone(),
                        reward: 0.0,
                        observation: obs.clone(),
                        belief: Some(Arc::clone(&shared)),
                        cumulative_discount: 1.0,
                    }
                })
                .collect()
        }
    };
    Ok(particles)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefUpdate {
    pub belief: Belief,
    /// Every hypothesis had zero likelihood; the propagated hypotheses were
    /// kept with uniform weights.
    pub degenerate: bool,
    pub resampled: bool,
}

/// Particle-filter belief update.
///
/// Each hypothesis is propagated through the model under its own substream,
/// reweighted by the observation likelihood and normalized. Systematic
/// resampling kicks in when the effective sample size drops below half the
/// hypothesis count.
pub fn update_belief(
    model: &dyn GenerativeModel,
    belief: &Belief,
    action: ActionId,
    observation: &Observation,
    seed: u64,
) -> BeliefUpdate {
    update_belief_with(model, belief, action, observation, seed, Execution::Sequential)
}

pub fn update_belief_with(
    model: &dyn GenerativeModel,
    belief: &Belief,
    action: ActionId,
    observation: &Observation,
    seed: u64,
    exec: Execution,
) -> BeliefUpdate {
    let stream = SeedStream::new(seed);
    let propagated: Vec<(StateVector, f64)> = par::map_range(belief.len(), exec, |i| {
        let prev = &belief.states[i];
        let mut rng = stream.derive(i as u64).rng();
        let next = if model.is_terminal(prev) {
            prev.clone()
        } else {
            model.step(prev, action, &mut rng).next_state
        };
        let lik = model.observation_likelihood(prev, action, &next, observation);
        (next, belief.weights[i] * lik)
    });
    let total: f64 = propagated.iter().map(|(_, w)| w).sum();
    let n = propagated.len();
    let (states, weights): (Vec<_>, Vec<_>) = propagated.into_iter().unzip();
    if !total.is_finite() || total <= 0.0 {
        return BeliefUpdate {
            belief: Belief { states, weights: vec![1.0 / n as f64; n] },
            degenerate: true,
            resampled: false,
        };
    }
    let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
    let updated = Belief { states, weights };
    if updated.effective_sample_size() < 0.5 * n as f64 {
        let mut rng = stream.derive(TAG_RESAMPLE).rng();
        return BeliefUpdate { belief: systematic_resample(&updated, &mut rng), degenerate: false, resampled: true };
    }
    BeliefUpdate { belief: updated, degenerate: false, resampled: false }
}

fn systematic_resample(belief: &Belief, rng: &mut SimRng) -> Belief {
    let n = belief.len();
    let step = 1.0 / n as f64;
    let start: f64 = rng.random::<f64>() * step;
    let mut states = Vec::with_capacity(n);
    let mut cumulative = belief.weights[0];
    let mut j = 0;
    for i in 0..n {
        let u = start + i as f64 * step;
        while u > cumulative && j + 1 < n {
            j += 1;
            cumulative += belief.weights[j];
        }
        states.push(belief.states[j].clone());
    }
    Belief { states, weights: vec![step; n] }
}
