//! Rollout-based reference policy for the vaccine environment.

use crate::env::sird::{SirdParams, VaccineEnv};
use crate::mdp::{ActionId, BaselinePolicy, GenerativeModel, Query, ScoreKind, StateVector};
use crate::rng::SeedStream;

/// Scores each city by the noise-free return of vaccinating it now and then
/// following the largest-susceptible-population heuristic for the remaining
/// turns.
#[derive(Debug, Clone)]
pub struct VaccineLookahead {
    env: VaccineEnv,
}

impl VaccineLookahead {
    pub fn new(params: &SirdParams) -> crate::Result<Self> {
        let env = VaccineEnv::new(SirdParams { noise_std: 0.0, ..params.clone() })?;
        Ok(Self { env })
    }

    /// Inactive city with the most susceptibles, lowest index on ties.
    pub fn largest_susceptible(env: &VaccineEnv, state: &StateVector) -> ActionId {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..env.n_cities() {
            if env.is_active(state, i) {
                continue;
            }
            let s = env.city(state, i)[0];
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        ActionId(best.map_or(0, |(i, _)| i))
    }

    fn rollout_value(&self, state: &StateVector, first: ActionId) -> f64 {
        // The noise-free model never draws from the generator.
        let mut rng = SeedStream::new(0).rng();
        let gamma = self.env.discount();
        let mut r = self.env.step(state, first, &mut rng);
        let mut total = r.reward;
        let mut disc = gamma;
        while !r.done {
            let a = Self::largest_susceptible(&self.env, &r.next_state);
            r = self.env.step(&r.next_state, a, &mut rng);
            total += disc * r.reward;
            disc *= gamma;
        }
        total
    }
}

impl BaselinePolicy for VaccineLookahead {
    fn score_kind(&self) -> ScoreKind {
        ScoreKind::ActionValue
    }

    fn action_count(&self) -> usize {
        self.env.action_count()
    }

    fn input_dim(&self) -> usize {
        self.env.state_dim()
    }

    fn scores(&self, query: Query<'_>) -> Vec<f64> {
        let n = self.env.action_count();
        match query {
            Query::State(s) => (0..n).map(|a| self.rollout_value(s, ActionId(a))).collect(),
            Query::Belief(b) => {
                let mut out = vec![0.0; n];
                for (s, w) in b.iter() {
                    for (a, o) in out.iter_mut().enumerate() {
                        *o += w * self.rollout_value(s, ActionId(a));
                    }
                }
                out
            }
        }
    }
}
