//! Simplified network-defense POMDP.
//!
//! The network has `n_lans` LANs, each with one application server and
//! `workstations_per_lan` workstations, plus one data server. Workstations
//! link to their LAN peers and LAN server; servers form a complete graph.
//! The attacker starts on one workstation and pushes along the shortest path
//! toward the data server (workstation → LAN server → data server).
//!
//! Node numbering: LAN `l` owns `l * (W + 1)` (its server) and the next `W`
//! ids (workstations); the data server is last.
//!
//! Actions: `0..n_lans` scan a LAN, then one scan-and-clean action per node
//! other than the data server.
//!
//! State layout: `[c_0, ..., c_{N-1}, t]`, `c_k ∈ {0, 1}` compromised.
//! Observation: one alert flag per node.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    ActionId, Belief, GenerativeModel, Observability, Observation, StateVector, StepResult, SummaryKind,
};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyberParams {
    pub n_lans: usize,
    pub workstations_per_lan: usize,
    pub p_detect: f64,
    pub p_spontaneous_alert: f64,
    pub p_attack_spread: f64,
    pub breach_penalty: f64,
    pub horizon: usize,
    /// Copies of each start hypothesis in the initial belief.
    pub belief_copies: usize,
    pub discount: f64,
}

impl Default for CyberParams {
    fn default() -> Self {
        Self {
            n_lans: 4,
            workstations_per_lan: 10,
            p_detect: 0.8,
            p_spontaneous_alert: 0.05,
            p_attack_spread: 0.15,
            breach_penalty: -100.0,
            horizon: 40,
            belief_copies: 1,
            discount: 0.99,
        }
    }
}

impl CyberParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_lans == 0 || self.workstations_per_lan == 0 {
            return fail("network must have at least one LAN and workstation");
        }
        if !(self.p_detect > 0.0 && self.p_detect <= 1.0) {
            return fail("p_detect must be in (0, 1]");
        }
        for p in [self.p_spontaneous_alert, self.p_attack_spread] {
            if !(0.0..=1.0).contains(&p) {
                return fail("probabilities must be in [0, 1]");
            }
        }
        if self.horizon == 0 || self.belief_copies == 0 {
            return fail("horizon and belief_copies must be positive");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return fail("discount must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    LanServer { lan: usize },
    Workstation { lan: usize, slot: usize },
    DataServer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CyberAction {
    ScanLan(usize),
    Clean(usize),
}

#[derive(Debug, Clone)]
pub struct CyberEnv {
    params: CyberParams,
}

impl CyberEnv {
    pub fn new(params: CyberParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &CyberParams {
        &self.params
    }

    pub fn node_count(&self) -> usize {
        self.params.n_lans * (self.params.workstations_per_lan + 1) + 1
    }

    pub fn data_server(&self) -> usize {
        self.node_count() - 1
    }

    pub fn role(&self, node: usize) -> NodeRole {
        let stride = self.params.workstations_per_lan + 1;
        if node == self.data_server() {
            NodeRole::DataServer
        } else if node.is_multiple_of(stride) {
            NodeRole::LanServer { lan: node / stride }
        } else {
            NodeRole::Workstation { lan: node / stride, slot: node % stride - 1 }
        }
    }

    pub fn lan_of(&self, node: usize) -> Option<usize> {
        match self.role(node) {
            NodeRole::LanServer { lan } | NodeRole::Workstation { lan, .. } => Some(lan),
            NodeRole::DataServer => None,
        }
    }

    pub fn workstation(&self, lan: usize, slot: usize) -> usize {
        lan * (self.params.workstations_per_lan + 1) + 1 + slot
    }

    pub fn lan_server(&self, lan: usize) -> usize {
        lan * (self.params.workstations_per_lan + 1)
    }

    /// Next hop on the shortest path to the data server.
    pub fn next_hop(&self, node: usize) -> Option<usize> {
        match self.role(node) {
            NodeRole::Workstation { lan, .. } => Some(self.lan_server(lan)),
            NodeRole::LanServer { .. } => Some(self.data_server()),
            NodeRole::DataServer => None,
        }
    }

    pub fn decode(&self, action: ActionId) -> CyberAction {
        if action.0 < self.params.n_lans {
            CyberAction::ScanLan(action.0)
        } else {
            CyberAction::Clean(action.0 - self.params.n_lans)
        }
    }

    pub fn encode(&self, action: CyberAction) -> ActionId {
        match action {
            CyberAction::ScanLan(l) => ActionId(l),
            CyberAction::Clean(n) => ActionId(self.params.n_lans + n),
        }
    }

    /// State with exactly the listed nodes compromised, at time `t`.
    pub fn state_with(&self, compromised: &[usize], t: usize) -> StateVector {
        let mut v = vec![0.0; self.node_count() + 1];
        for &n in compromised {
            v[n] = 1.0;
        }
        v[self.node_count()] = t as f64;
        StateVector::new(v)
    }

    pub fn compromised(&self, state: &StateVector, node: usize) -> bool {
        state[node] > 0.5
    }

    /// Probability that compromised `node` raises an alert under `action`.
    fn alert_probability(&self, node: usize, action: CyberAction) -> f64 {
        let spont = self.params.p_spontaneous_alert;
        match action {
            CyberAction::ScanLan(l) if self.lan_of(node) == Some(l) => 1.0 - (1.0 - self.params.p_detect) * (1.0 - spont),
            _ => spont,
        }
    }

    /// Start hypotheses: one per workstation.
    pub fn start_states(&self) -> Vec<StateVector> {
        let p = &self.params;
        (0..p.n_lans)
            .flat_map(|l| (0..p.workstations_per_lan).map(move |s| (l, s)))
            .map(|(l, s)| self.state_with(&[self.workstation(l, s)], 0))
            .collect()
    }

    /// Per-node compromise probability under a belief.
    pub fn marginals(&self, belief: &Belief) -> Vec<f64> {
        let n = self.node_count();
        let mut m = vec![0.0; n];
        for (s, w) in belief.iter() {
            for (k, v) in m.iter_mut().enumerate() {
                if s[k] > 0.5 {
                    *v += w;
                }
            }
        }
        m
    }
}

impl GenerativeModel for CyberEnv {
    fn action_count(&self) -> usize {
        self.params.n_lans + self.node_count() - 1
    }

    fn state_dim(&self) -> usize {
        self.node_count() + 1
    }

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.params.horizon)
    }

    fn observability(&self) -> Observability {
        Observability::Partial
    }

    fn initial_state(&self, rng: &mut SimRng) -> StateVector {
        let starts = self.start_states();
        starts[rng.random_range(0..starts.len())].clone()
    }

    fn initial_belief(&self) -> Option<Belief> {
        let starts = self.start_states();
        let states: Vec<StateVector> =
            starts.iter().flat_map(|s| std::iter::repeat_n(s.clone(), self.params.belief_copies)).collect();
        Belief::uniform(states).ok()
    }

    fn initial_observation(&self) -> Option<Observation> {
        Some(Observation::zeros(self.node_count()))
    }

    fn is_terminal(&self, state: &StateVector) -> bool {
        self.compromised(state, self.data_server()) || state[self.node_count()] as usize >= self.params.horizon
    }

    /// Defender acts first (scan or clean), alerts are drawn from the
    /// pre-attack compromise set, then the attacker spreads.
    fn step(&self, state: &StateVector, action: ActionId, rng: &mut SimRng) -> StepResult {
        let n = self.node_count();
        let act = self.decode(action);
        let mut next = state.clone();
        let mut obs = vec![0.0; n];
        if let CyberAction::Clean(j) = act {
            obs[j] = if self.compromised(state, j) { 1.0 } else { 0.0 };
            next.as_mut_slice()[j] = 0.0;
        }
        for (k, o) in obs.iter_mut().enumerate() {
            if act == CyberAction::Clean(k) || !self.compromised(state, k) {
                continue;
            }
            if rng.random::<f64>() < self.alert_probability(k, act) {
                *o = 1.0;
            }
        }
        let before = next.clone();
        for k in 0..n {
            if !self.compromised(&before, k) {
                continue;
            }
            if let Some(h) = self.next_hop(k) {
                if rng.random::<f64>() < self.params.p_attack_spread {
                    next.as_mut_slice()[h] = 1.0;
                }
            }
        }
        next.as_mut_slice()[n] += 1.0;
        let breached = self.compromised(&next, self.data_server());
        StepResult {
            done: breached || next[n] as usize >= self.params.horizon,
            reward: if breached { self.params.breach_penalty } else { 0.0 },
            next_state: next,
            observation: Some(Observation::new(obs)),
        }
    }

    fn observation_likelihood(
        &self,
        state: &StateVector,
        action: ActionId,
        _next_state: &StateVector,
        observation: &Observation,
    ) -> f64 {
        let act = self.decode(action);
        let mut lik = 1.0;
        for k in 0..self.node_count() {
            let alert = observation[k] > 0.5;
            let comp = self.compromised(state, k);
            let p = if act == CyberAction::Clean(k) {
                if alert == comp { 1.0 } else { 0.0 }
            } else if comp {
                let pa = self.alert_probability(k, act);
                if alert { pa } else { 1.0 - pa }
            } else if alert {
                0.0
            } else {
                1.0
            };
            lik *= p;
            if lik == 0.0 {
                break;
            }
        }
        lik
    }

    fn action_label(&self, action: ActionId) -> String {
        match self.decode(action) {
            CyberAction::ScanLan(l) => format!("Scan LAN {}", l + 1),
            CyberAction::Clean(n) => match self.role(n) {
                NodeRole::LanServer { lan } => format!("Clean Server {}", lan + 1),
                NodeRole::Workstation { lan, slot } => format!("Clean Host {}.{}", lan + 1, slot + 1),
                NodeRole::DataServer => "Clean Data Server".into(),
            },
        }
    }

    fn summary_kind(&self) -> SummaryKind {
        SummaryKind::Observation
    }

    fn describe_state(&self, values: &[f64]) -> String {
        let alerts: Vec<String> = values
            .iter()
            .take(self.node_count())
            .enumerate()
            .filter(|(_, v)| **v > 0.5)
            .map(|(k, _)| match self.role(k) {
                NodeRole::LanServer { lan } => format!("server {}", lan + 1),
                NodeRole::Workstation { lan, slot } => format!("host {}.{}", lan + 1, slot + 1),
                NodeRole::DataServer => "data server".into(),
            })
            .collect();
        if alerts.is_empty() {
            "no alerts".into()
        } else {
            format!("alerts: {}", alerts.join(", "))
        }
    }
}
