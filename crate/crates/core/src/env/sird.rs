//! Multi-city vaccine planning on a stochastic SIRD model.
//!
//! Each turn the agent starts a vaccine program in one city. The epidemic is
//! then advanced with the coupled difference equations
//!
//! ```text
//! dS = -β Ĩ S - α S + ε      dI = β Ĩ S + ε - γ I - μ I
//! dR = γ I + α S             dD = μ I
//! ```
//!
//! where `Ĩ_i = Σ_j w_ij I_j`. After the last program the model runs until
//! every city has no susceptible or no infected population left.
//!
//! State layout: `[S_0, I_0, R_0, D_0, ..., S_n-1, .., D_n-1, v_0, ..., v_n-1, turn]`
//! with `v_i ∈ {0, 1}` marking active programs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, GenerativeModel, StateVector, StepResult, SummaryKind};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SirdParams {
    pub n_cities: usize,
    pub beta: f64,
    pub gamma_rec: f64,
    pub mu: f64,
    pub alpha_vax: f64,
    pub noise_std: f64,
    /// Reward weight on Σ dI.
    pub reward_infected: f64,
    /// Reward weight on Σ dD.
    pub reward_dead: f64,
    /// Programs (turns) per episode.
    pub episode_actions: usize,
    /// `w_ij = weight_decay^|i-j|`, unless `weights` is given.
    pub weight_decay: f64,
    pub weights: Option<Vec<Vec<f64>>>,
    pub initial_infected_max: f64,
    pub hot_city_infected: f64,
    pub ticks_per_action: usize,
    /// A city is quiescent once S or I falls below this.
    pub quiescence_tol: f64,
    pub max_runout_ticks: usize,
    pub discount: f64,
}

impl Default for SirdParams {
    fn default() -> Self {
        Self {
            n_cities: 8,
            beta: 0.25,
            gamma_rec: 0.1,
            mu: 0.02,
            alpha_vax: 0.3,
            noise_std: 0.005,
            reward_infected: -1.0,
            reward_dead: -10.0,
            episode_actions: 5,
            weight_decay: 0.3,
            weights: None,
            initial_infected_max: 0.1,
            hot_city_infected: 0.25,
            ticks_per_action: 1,
            quiescence_tol: 1e-3,
            max_runout_ticks: 1000,
            discount: 0.99,
        }
    }
}

impl SirdParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_cities == 0 {
            return fail("n_cities must be positive".into());
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma_rec", self.gamma_rec),
            ("mu", self.mu),
            ("alpha_vax", self.alpha_vax),
            ("noise_std", self.noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} must be a finite non-negative rate"));
            }
        }
        if self.gamma_rec + self.mu > 1.0 || self.alpha_vax > 1.0 {
            return fail("per-tick outflows must not exceed the compartment".into());
        }
        if self.episode_actions == 0 || self.ticks_per_action == 0 {
            return fail("episode_actions and ticks_per_action must be positive".into());
        }
        if let Some(w) = &self.weights {
            let n = self.n_cities;
            if w.len() != n || w.iter().any(|r| r.len() != n) {
                return fail("weights must be an n_cities × n_cities matrix".into());
            }
            for (i, row) in w.iter().enumerate() {
                if row[i] != 1.0 {
                    return fail("weights must have a unit diagonal".into());
                }
                for (j, &wij) in row.iter().enumerate() {
                    if wij < 0.0 || wij != w[j][i] {
                        return fail("weights must be symmetric and non-negative".into());
                    }
                }
            }
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return fail("discount must be in (0, 1]".into());
        }
        Ok(())
    }
}

/// Per-city compartment changes from one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Flows {
    pub ds: f64,
    pub di: f64,
    pub dr: f64,
    pub dd: f64,
}

#[derive(Debug, Clone)]
pub struct VaccineEnv {
    params: SirdParams,
    weights: Vec<Vec<f64>>,
    noise: Option<Normal<f64>>,
}

pub const CITY_NAMES: [&str; 8] =
    ["Ashford", "Brookvale", "Cedarton", "Dunmore", "Elmstead", "Fairhaven", "Glenrock", "Harlow"];

impl VaccineEnv {
    pub fn new(params: SirdParams) -> Result<Self> {
        params.validate()?;
        let n = params.n_cities;
        let weights = params.weights.clone().unwrap_or_else(|| {
            (0..n)
                .map(|i| (0..n).map(|j| params.weight_decay.powi((i as i32 - j as i32).abs())).collect())
                .collect()
        });
        let noise = (params.noise_std > 0.0).then(|| Normal::new(0.0, params.noise_std).expect("valid std"));
        Ok(Self { params, weights, noise })
    }

    pub fn params(&self) -> &SirdParams {
        &self.params
    }

    pub fn n_cities(&self) -> usize {
        self.params.n_cities
    }

    pub fn city(&self, state: &StateVector, i: usize) -> [f64; 4] {
        let b = 4 * i;
        [state[b], state[b + 1], state[b + 2], state[b + 3]]
    }

    pub fn is_active(&self, state: &StateVector, i: usize) -> bool {
        state[4 * self.params.n_cities + i] > 0.5
    }

    pub fn turn(&self, state: &StateVector) -> usize {
        state[5 * self.params.n_cities] as usize
    }

    /// Builds a state from per-city `(S, I, R, D)` values, no programs.
    pub fn state_from_cities(&self, cities: &[[f64; 4]]) -> StateVector {
        let n = self.params.n_cities;
        let mut v = vec![0.0; 5 * n + 1];
        for (i, c) in cities.iter().enumerate().take(n) {
            v[4 * i..4 * i + 4].copy_from_slice(c);
        }
        StateVector::new(v)
    }

    /// Compartment flows for one tick given explicit noise terms.
    ///
    /// Outflows are limited to what each compartment holds, so every
    /// compartment stays non-negative and S+I+R+D is conserved.
    pub fn flows(&self, state: &StateVector, noise: &[f64]) -> Vec<Flows> {
        let n = self.params.n_cities;
        let p = &self.params;
        (0..n)
            .map(|i| {
                let [s, inf, _, _] = self.city(state, i);
                let exposure: f64 = (0..n).map(|j| self.weights[i][j] * state[4 * j + 1]).sum();
                let alpha = if self.is_active(state, i) { p.alpha_vax } else { 0.0 };
                let mut infection = p.beta * exposure * s;
                let mut vaccination = alpha * s;
                let drain = infection + vaccination;
                if drain > s {
                    let scale = s / drain;
                    infection *= scale;
                    vaccination *= scale;
                }
                let recovery = p.gamma_rec * inf;
                let death = p.mu * inf;
                // Noise moves mass between S and I only.
                let lo = -(inf - recovery - death).max(0.0) - infection;
                let hi = s - infection - vaccination;
                let eps = noise[i].max(lo).min(hi);
                let transfer = infection + eps;
                Flows {
                    ds: -transfer - vaccination,
                    di: transfer - recovery - death,
                    dr: recovery + vaccination,
                    dd: death,
                }
            })
            .collect()
    }

    /// Advances one tick in place and returns the tick's reward.
    fn tick(&self, state: &mut StateVector, rng: &mut SimRng) -> f64 {
        let n = self.params.n_cities;
        let noise: Vec<f64> = match &self.noise {
            Some(d) => (0..n).map(|_| d.sample(rng)).collect(),
            None => vec![0.0; n],
        };
        let flows = self.flows(state, &noise);
        let v = state.as_mut_slice();
        let (mut sum_di, mut sum_dd) = (0.0, 0.0);
        for (i, f) in flows.iter().enumerate() {
            let b = 4 * i;
            v[b] = (v[b] + f.ds).max(0.0);
            v[b + 1] = (v[b + 1] + f.di).max(0.0);
            v[b + 2] += f.dr;
            v[b + 3] += f.dd;
            sum_di += f.di;
            sum_dd += f.dd;
        }
        self.params.reward_infected * sum_di + self.params.reward_dead * sum_dd
    }

    fn quiescent(&self, state: &StateVector) -> bool {
        let tol = self.params.quiescence_tol;
        (0..self.params.n_cities).all(|i| {
            let [s, inf, _, _] = self.city(state, i);
            s < tol || inf < tol
        })
    }
}

impl GenerativeModel for VaccineEnv {
    fn action_count(&self) -> usize {
        self.params.n_cities
    }

    fn state_dim(&self) -> usize {
        5 * self.params.n_cities + 1
    }

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.params.episode_actions)
    }

    /// Every city starts with up to `initial_infected_max` infected and the
    /// remainder susceptible; one random city starts at `hot_city_infected`.
    fn initial_state(&self, rng: &mut SimRng) -> StateVector {
        let n = self.params.n_cities;
        let hot = rng.random_range(0..n);
        let cities: Vec<[f64; 4]> = (0..n)
            .map(|i| {
                let inf = if i == hot {
                    self.params.hot_city_infected
                } else {
                    rng.random::<f64>() * self.params.initial_infected_max
                };
                [1.0 - inf, inf, 0.0, 0.0]
            })
            .collect();
        self.state_from_cities(&cities)
    }

    fn is_terminal(&self, state: &StateVector) -> bool {
        self.turn(state) >= self.params.episode_actions
    }

    fn step(&self, state: &StateVector, action: ActionId, rng: &mut SimRng) -> StepResult {
        let n = self.params.n_cities;
        let mut next = state.clone();
        // Re-selecting an active city is allowed and changes nothing.
        next.as_mut_slice()[4 * n + action.0] = 1.0;
        next.as_mut_slice()[5 * n] += 1.0;
        let mut reward = 0.0;
        for _ in 0..self.params.ticks_per_action {
            reward += self.tick(&mut next, rng);
        }
        let done = self.turn(&next) >= self.params.episode_actions;
        if done {
            let mut ticks = 0;
            while !self.quiescent(&next) && ticks < self.params.max_runout_ticks {
                reward += self.tick(&mut next, rng);
                ticks += 1;
            }
        }
        StepResult { next_state: next, observation: None, reward, done }
    }

    fn action_label(&self, action: ActionId) -> String {
        CITY_NAMES.get(action.0).map(|s| s.to_string()).unwrap_or_else(|| format!("City {}", action.0 + 1))
    }

    fn summary_kind(&self) -> SummaryKind {
        SummaryKind::Mean
    }

    fn describe_state(&self, values: &[f64]) -> String {
        let n = self.params.n_cities;
        let cities: Vec<String> = (0..n)
            .map(|i| {
                format!(
                    "{}: S={:.2} I={:.2}{}",
                    self.action_label(ActionId(i)),
                    values[4 * i],
                    values[4 * i + 1],
                    if values[4 * n + i] > 0.5 { " [vax]" } else { "" }
                )
            })
            .collect();
        cities.join("; ")
    }
}
