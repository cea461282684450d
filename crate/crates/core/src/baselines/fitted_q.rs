//! Fitted Q-iteration with a small tanh network.
//!
//! Training is online and ε-greedy, with an experience replay buffer,
//! n-step returns, a periodically refreshed target network and double
//! Q-learning targets. Optimization uses Adam on the squared TD error.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax, ActionId, BaselinePolicy, GenerativeModel, Query, ScoreKind, StateVector};
use crate::rng::{SeedStream, SimRng};

/// Two-layer perceptron `x → tanh(W1 x + b1) → W2 h + b2`.
///
/// Parameters are stored flat in the order `W1, b1, W2, b2`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub params: Vec<f64>,
}

/// A regression target for one output of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub output: usize,
    pub target: f64,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut SimRng) -> Self {
        let mut params = Vec::with_capacity(Self::param_count(input, hidden, output));
        let l1 = (6.0 / (input + hidden) as f64).sqrt();
        params.extend((0..hidden * input).map(|_| rng.random_range(-l1..l1)));
        params.extend(std::iter::repeat_n(0.0, hidden));
        let l2 = (6.0 / (hidden + output) as f64).sqrt();
        params.extend((0..output * hidden).map(|_| rng.random_range(-l2..l2)));
        params.extend(std::iter::repeat_n(0.0, output));
        Self { input, hidden, output, params }
    }

    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + output * hidden + output
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    fn hidden_layer(&self, x: &[f64]) -> Vec<f64> {
        let (b1, _, _) = self.offsets();
        (0..self.hidden)
            .map(|j| {
                let row = &self.params[j * self.input..(j + 1) * self.input];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.params[b1 + j];
                z.tanh()
            })
            .collect()
    }

    fn output_layer(&self, h: &[f64]) -> Vec<f64> {
        let (_, w2, b2) = self.offsets();
        (0..self.output)
            .map(|k| {
                let row = &self.params[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
                row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.params[b2 + k]
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.output_layer(&self.hidden_layer(x))
    }

    /// Mean of `½ (f(x)_k - y)²` over the batch.
    pub fn loss(&self, batch: &[Sample]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|s| {
                let e = self.forward(&s.input)[s.output] - s.target;
                0.5 * e * e
            })
            .sum();
        total / batch.len() as f64
    }

    /// Loss and its analytic gradient with respect to `params`.
    pub fn loss_and_grad(&self, batch: &[Sample]) -> (f64, Vec<f64>) {
        let (b1, w2, b2) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let h = self.hidden_layer(&s.input);
            let k = s.output;
            let row = &self.params[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
            let q = row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + self.params[b2 + k];
            let e = q - s.target;
            loss += 0.5 * e * e * scale;
            let dq = e * scale;
            grad[b2 + k] += dq;
            for j in 0..self.hidden {
                grad[w2 + k * self.hidden + j] += dq * h[j];
                let dz = dq * row[j] * (1.0 - h[j] * h[j]);
                grad[b1 + j] += dz;
                let g = &mut grad[j * self.input..(j + 1) * self.input];
                for (gi, xi) in g.iter_mut().zip(&s.input) {
                    *gi += dz * xi;
                }
            }
        }
        (loss, grad)
    }

    /// Central finite-difference gradient of [`Mlp::loss`].
    pub fn numerical_grad(&self, batch: &[Sample], h: f64) -> Vec<f64> {
        let mut probe = self.clone();
        (0..self.params.len())
            .map(|i| {
                let orig = probe.params[i];
                probe.params[i] = orig + h;
                let up = probe.loss(batch);
                probe.params[i] = orig - h;
                let down = probe.loss(batch);
                probe.params[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FittedQConfig {
    /// Environment steps.
    pub iterations: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Steps collected before the first update.
    pub warmup: usize,
    pub target_refresh: usize,
    pub n_step: usize,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `iterations` over which ε decays linearly.
    pub epsilon_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for FittedQConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            hidden: 64,
            batch_size: 32,
            replay_capacity: 20_000,
            warmup: 500,
            target_refresh: 250,
            n_step: 3,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.6,
            grad_clip: 10.0,
        }
    }
}

impl FittedQConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.hidden == 0 || self.batch_size == 0 || self.n_step == 0 || self.replay_capacity == 0 {
            return fail("hidden, batch_size, n_step and replay_capacity must be positive");
        }
        if self.target_refresh == 0 {
            return fail("target_refresh must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail("learning_rate must be positive");
        }
        for e in [self.epsilon_start, self.epsilon_end, self.epsilon_decay] {
            if !(0.0..=1.0).contains(&e) {
                return fail("epsilon settings must lie in [0, 1]");
            }
        }
        Ok(())
    }

    fn epsilon(&self, it: usize) -> f64 {
        let horizon = self.epsilon_decay * self.iterations as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (it as f64 / horizon).min(1.0);
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// Greedy policy over a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedQPolicy {
    pub net: Mlp,
}

impl FittedQPolicy {
    pub fn q_values(&self, state: &StateVector) -> Vec<f64> {
        self.net.forward(state)
    }
}

impl BaselinePolicy for FittedQPolicy {
    fn score_kind(&self) -> ScoreKind {
        ScoreKind::ActionValue
    }

    fn action_count(&self) -> usize {
        self.net.output
    }

    fn input_dim(&self) -> usize {
        self.net.input
    }

    fn scores(&self, query: Query<'_>) -> Vec<f64> {
        match query {
            Query::State(s) => self.q_values(s),
            Query::Belief(b) => {
                let mut out = vec![0.0; self.net.output];
                for (s, w) in b.iter() {
                    for (o, q) in out.iter_mut().zip(self.q_values(s)) {
                        *o += w * q;
                    }
                }
                out
            }
        }
    }
}

struct Experience {
    state: StateVector,
    action: usize,
    /// Discounted sum of up to `n_step` rewards.
    ret: f64,
    next: StateVector,
    done: bool,
    /// γ^k for the k rewards in `ret`.
    bootstrap: f64,
}

/// Per-iteration training diagnostics.
#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub losses: Vec<f64>,
    pub episodes: usize,
}

/// Trains a fitted-Q policy by simulating `model`.
///
/// With `iterations == 0` the freshly initialized network is returned.
pub fn train(model: &dyn GenerativeModel, config: &FittedQConfig, seed: u64) -> Result<(FittedQPolicy, TrainingReport)> {
    config.validate()?;
    if model.is_partially_observable() {
        return Err(Error::UnsupportedEnvironment("fitted-Q training needs a fully observable model".into()));
    }
    let stream = SeedStream::new(seed);
    let mut rng = stream.derive(1).rng();
    let n_actions = model.action_count();
    let mut net = Mlp::new(model.state_dim(), config.hidden, n_actions, &mut rng);
    let mut target = net.clone();
    let mut adam = Adam::new(net.params.len(), config.learning_rate);
    let gamma = model.discount();
    let mut replay: VecDeque<Experience> = VecDeque::with_capacity(config.replay_capacity.min(1 << 20));
    let mut pending: VecDeque<(StateVector, usize, f64)> = VecDeque::new();
    let mut report = TrainingReport::default();
    let mut state = model.initial_state(&mut rng);

    let push = |replay: &mut VecDeque<Experience>, e: Experience| {
        if replay.len() == config.replay_capacity {
            replay.pop_front();
        }
        replay.push_back(e);
    };
    let flush_front = |pending: &VecDeque<(StateVector, usize, f64)>, next: &StateVector, done: bool| {
        let mut ret = 0.0;
        let mut disc = 1.0;
        for (_, _, r) in pending {
            ret += disc * r;
            disc *= gamma;
        }
        let (s, a, _) = &pending[0];
        Experience { state: s.clone(), action: *a, ret, next: next.clone(), done, bootstrap: disc }
    };

    for it in 0..config.iterations {
        let action = if rng.random::<f64>() < config.epsilon(it) {
            rng.random_range(0..n_actions)
        } else {
            argmax(&net.forward(&state)).0
        };
        let r = model.step(&state, ActionId(action), &mut rng);
        pending.push_back((state.clone(), action, r.reward));
        if pending.len() == config.n_step {
            push(&mut replay, flush_front(&pending, &r.next_state, r.done));
            pending.pop_front();
        }
        if r.done {
            while !pending.is_empty() {
                push(&mut replay, flush_front(&pending, &r.next_state, true));
                pending.pop_front();
            }
            report.episodes += 1;
            state = model.initial_state(&mut rng);
        } else {
            state = r.next_state;
        }

        if it >= config.warmup && replay.len() >= config.batch_size {
            let batch: Vec<Sample> = (0..config.batch_size)
                .map(|_| {
                    let e = &replay[rng.random_range(0..replay.len())];
                    let y = if e.done {
                        e.ret
                    } else {
                        let a_star = argmax(&net.forward(&e.next)).0;
                        e.ret + e.bootstrap * target.forward(&e.next)[a_star]
                    };
                    Sample { input: e.state.as_slice().to_vec(), output: e.action, target: y }
                })
                .collect();
            let (loss, mut grad) = net.loss_and_grad(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { iteration: it, loss });
            }
            if config.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > config.grad_clip {
                    grad.iter_mut().for_each(|g| *g *= config.grad_clip / norm);
                }
            }
            adam.step(&mut net.params, &grad);
            report.losses.push(loss);
        }
        if (it + 1) % config.target_refresh == 0 {
            target = net.clone();
        }
    }
    Ok((FittedQPolicy { net }, report))
}
