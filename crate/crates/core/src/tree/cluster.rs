//! Greedy action clustering of particle sets.
//!
//! Particles are grouped by the baseline's greedy action. The `k` most
//! frequent actions each seed a cluster; every remaining particle joins the
//! cluster whose action it considers least sub-optimal. [`cluster`] grows `k`
//! until the aggregated sub-optimality drops to the threshold or the cluster
//! cap is hit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax, checked_scores, ActionId, BaselinePolicy, Particle, ScoreKind};
use crate::par::{self, Execution};

/// How per-particle distances are folded into δ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaAggregation {
    /// Mean over all particles of the set (matched particles contribute 0).
    #[default]
    Mean,
    /// Plain sum over reassigned particles.
    Sum,
}

/// Sub-optimality of taking `action` given a score vector.
///
/// For action values this is `|Q(a) - max Q|`; for probabilities it is the
/// gap `max π - π(a)`.
pub fn score_distance(kind: ScoreKind, scores: &[f64], action: ActionId) -> f64 {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match kind {
        ScoreKind::ActionValue => (scores[action.0] - best).abs(),
        ScoreKind::Probability => best - scores[action.0],
    }
}

/// Distance of `action` from the baseline's preference at `particle`.
pub fn distance(policy: &dyn BaselinePolicy, particle: &Particle, action: ActionId) -> Result<f64> {
    if action.0 >= policy.action_count() {
        return Err(Error::InvalidAction { action, count: policy.action_count() });
    }
    let scores = checked_scores(policy, particle.query())?;
    Ok(score_distance(policy.score_kind(), &scores, action))
}

/// Scores and greedy actions of a particle set, computed once and reused
/// across every `k` tried by [`cluster`].
#[derive(Debug, Clone)]
pub struct ScoredSet {
    pub kind: ScoreKind,
    pub scores: Vec<Vec<f64>>,
    pub greedy: Vec<ActionId>,
}

impl ScoredSet {
    pub fn compute(particles: &[Particle], policy: &dyn BaselinePolicy, exec: Execution) -> Result<Self> {
        let scores = par::map_slice(particles, exec, |p| checked_scores(policy, p.query()))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let greedy = scores.iter().map(|s| argmax(s)).collect();
        Ok(Self { kind: policy.score_kind(), scores, greedy })
    }

    pub fn len(&self) -> usize {
        self.greedy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.greedy.is_empty()
    }

    /// Distinct greedy actions by descending count, ties by ascending id.
    pub fn unique_actions(&self) -> Vec<ActionId> {
        rank_actions(&self.greedy)
    }
}

fn rank_actions(greedy: &[ActionId]) -> Vec<ActionId> {
    let mut counts: Vec<(ActionId, usize)> = Vec::new();
    for &a in greedy {
        match counts.iter_mut().find(|(b, _)| *b == a) {
            Some((_, c)) => *c += 1,
            None => counts.push((a, 1)),
        }
    }
    counts.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then(a.cmp(b)));
    counts.into_iter().map(|(a, _)| a).collect()
}

/// Distinct greedy actions of `particles`, ranked by frequency.
pub fn unique_actions(particles: &[Particle], policy: &dyn BaselinePolicy) -> Result<Vec<ActionId>> {
    Ok(ScoredSet::compute(particles, policy, Execution::Sequential)?.unique_actions())
}

/// Particles assigned to one action.
pub type ParticleGroup = (ActionId, Vec<Particle>);

/// A partition of particle indices keyed by action.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// `(action, member indices)` in rank order. Member indices ascend.
    pub groups: Vec<(ActionId, Vec<usize>)>,
    pub delta: f64,
}

impl Clustering {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// One greedy clustering pass with `k` seed actions.
pub fn greedy_cluster_scored(set: &ScoredSet, k: usize, aggregation: DeltaAggregation) -> Clustering {
    let ranked = set.unique_actions();
    let top = &ranked[..k.min(ranked.len())];
    let mut groups: Vec<(ActionId, Vec<usize>)> = top.iter().map(|&a| (a, Vec::new())).collect();
    let mut delta = 0.0;
    for (i, g) in set.greedy.iter().enumerate() {
        if let Some(slot) = groups.iter_mut().find(|(a, _)| a == g) {
            slot.1.push(i);
            continue;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, (a, _)) in groups.iter().enumerate() {
            let d = score_distance(set.kind, &set.scores[i], *a);
            if d < best_d || (d == best_d && *a < groups[best].0) {
                best = j;
                best_d = d;
            }
        }
        groups[best].1.push(i);
        delta += best_d;
    }
    if aggregation == DeltaAggregation::Mean && !set.is_empty() {
        delta /= set.len() as f64;
    }
    Clustering { groups, delta }
}

/// Smallest `k` whose δ meets `delta_star`, capped at `c_max` clusters.
pub fn cluster_scored(set: &ScoredSet, delta_star: f64, c_max: usize, aggregation: DeltaAggregation) -> Clustering {
    let mut k = 1;
    loop {
        let c = greedy_cluster_scored(set, k, aggregation);
        if c.delta <= delta_star || c.len() >= c_max {
            return c;
        }
        k += 1;
    }
}

fn materialize(particles: Vec<Particle>, c: &Clustering) -> Vec<ParticleGroup> {
    let mut slots: Vec<Option<Particle>> = particles.into_iter().map(Some).collect();
    c.groups
        .iter()
        .map(|(a, idx)| (*a, idx.iter().map(|&i| slots[i].take().expect("index assigned twice")).collect()))
        .collect()
}

/// Groups `particles` into at most `k` action clusters.
pub fn greedy_cluster(
    particles: Vec<Particle>,
    k: usize,
    policy: &dyn BaselinePolicy,
    aggregation: DeltaAggregation,
) -> Result<(Vec<ParticleGroup>, f64)> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let set = ScoredSet::compute(&particles, policy, Execution::Sequential)?;
    let c = greedy_cluster_scored(&set, k, aggregation);
    let delta = c.delta;
    Ok((materialize(particles, &c), delta))
}

/// Recursive clustering: the smallest clustering within `delta_star`, or the
/// `c_max`-cluster one.
pub fn cluster(
    particles: Vec<Particle>,
    policy: &dyn BaselinePolicy,
    delta_star: f64,
    c_max: usize,
    aggregation: DeltaAggregation,
) -> Result<Vec<ParticleGroup>> {
    let set = ScoredSet::compute(&particles, policy, Execution::Sequential)?;
    let c = cluster_scored(&set, delta_star, c_max, aggregation);
    Ok(materialize(particles, &c))
}

pub(crate) fn split(particles: Vec<Particle>, c: &Clustering) -> Vec<ParticleGroup> {
    materialize(particles, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(kind: ScoreKind, scores: Vec<Vec<f64>>) -> ScoredSet {
        let greedy = scores.iter().map(|s| argmax(s)).collect();
        ScoredSet { kind, scores, greedy }
    }

    /// One-hot-ish scores making `a` greedy with a fixed margin.
    fn prefer(a: usize, n: usize) -> Vec<f64> {
        (0..n).map(|i| if i == a { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn distances() {
        let q = [1.0, 0.7, 0.2];
        assert!((score_distance(ScoreKind::ActionValue, &q, ActionId(1)) - 0.3).abs() < 1e-12);
        assert_eq!(score_distance(ScoreKind::ActionValue, &q, ActionId(0)), 0.0);
        let p = [0.6, 0.3, 0.1];
        assert!((score_distance(ScoreKind::Probability, &p, ActionId(2)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ranking() {
        let r = |v: &[usize]| rank_actions(&v.iter().map(|&i| ActionId(i)).collect::<Vec<_>>());
        assert_eq!(r(&[1, 1, 2, 1, 3]), vec![ActionId(1), ActionId(2), ActionId(3)]);
        assert_eq!(r(&[2, 0, 2, 0]), vec![ActionId(0), ActionId(2)]);
        assert_eq!(r(&[4, 4, 4]), vec![ActionId(4)]);
    }

    #[test]
    fn leftover_joins_least_suboptimal_cluster() {
        // actions a=0, b=1, c=2; greedy [a,a,b,a,b,c]
        let c_particle = vec![0.9, 0.8, 1.0];
        let s = set(
            ScoreKind::ActionValue,
            vec![prefer(0, 3), prefer(0, 3), prefer(1, 3), prefer(0, 3), prefer(1, 3), c_particle],
        );
        let c = greedy_cluster_scored(&s, 2, DeltaAggregation::Mean);
        assert_eq!(c.groups, vec![(ActionId(0), vec![0, 1, 3, 5]), (ActionId(1), vec![2, 4])]);
        assert!((c.delta - 0.1 / 6.0).abs() < 1e-12);
        let summed = greedy_cluster_scored(&s, 2, DeltaAggregation::Sum);
        assert!((summed.delta - 0.1).abs() < 1e-12);
    }

    #[test]
    fn full_k_has_zero_delta() {
        let s = set(ScoreKind::ActionValue, vec![prefer(0, 3), prefer(1, 3), prefer(2, 3)]);
        let c = greedy_cluster_scored(&s, 3, DeltaAggregation::Mean);
        assert_eq!(c.len(), 3);
        assert_eq!(c.delta, 0.0);
        let over = greedy_cluster_scored(&s, 10, DeltaAggregation::Mean);
        assert_eq!(over.len(), 3);
        assert_eq!(over.delta, 0.0);
    }

    #[test]
    fn unanimous_single_cluster() {
        let s = set(ScoreKind::ActionValue, vec![prefer(1, 3); 5]);
        let c = cluster_scored(&s, 0.0, 4, DeltaAggregation::Mean);
        assert_eq!(c.groups, vec![(ActionId(1), vec![0, 1, 2, 3, 4])]);
    }

    #[test]
    fn threshold_extremes() {
        let s = set(ScoreKind::ActionValue, vec![prefer(0, 3), prefer(1, 3), prefer(2, 3), prefer(0, 3)]);
        assert_eq!(cluster_scored(&s, 0.0, 4, DeltaAggregation::Mean).len(), 3);
        assert_eq!(cluster_scored(&s, 1e6, 4, DeltaAggregation::Mean).len(), 1);
        assert_eq!(cluster_scored(&s, 0.0, 2, DeltaAggregation::Mean).len(), 2);
    }
}
