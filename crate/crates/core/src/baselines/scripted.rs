//! Hand-written defender for the network-defense POMDP.

use crate::env::cyber::{CyberAction, CyberEnv};
use crate::mdp::{BaselinePolicy, Belief, Query, ScoreKind};

/// Cleans the most suspicious node once its compromise probability exceeds
/// `threshold`; otherwise scans the LAN with the highest expected number of
/// compromised nodes.
///
/// Scores are a probability vector with all mass on the chosen action.
/// Scan ties go to the lowest LAN, clean ties to the lowest node.
#[derive(Debug, Clone)]
pub struct ScriptedCyberPolicy {
    env: CyberEnv,
    pub threshold: f64,
}

impl ScriptedCyberPolicy {
    pub fn new(env: CyberEnv) -> Self {
        Self { env, threshold: 0.5 }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn choose(&self, belief: &Belief) -> CyberAction {
        let m = self.env.marginals(belief);
        let cleanable = self.env.data_server();
        let mut best: Option<(usize, f64)> = None;
        for (k, &p) in m.iter().enumerate().take(cleanable) {
            if p > self.threshold && best.is_none_or(|(_, bp)| p > bp) {
                best = Some((k, p));
            }
        }
        if let Some((k, _)) = best {
            return CyberAction::Clean(k);
        }
        let lans = self.env.params().n_lans;
        let mut load = vec![0.0; lans];
        for (k, &p) in m.iter().enumerate() {
            if let Some(l) = self.env.lan_of(k) {
                load[l] += p;
            }
        }
        let mut lan = 0;
        for l in 1..lans {
            if load[l] > load[lan] {
                lan = l;
            }
        }
        CyberAction::ScanLan(lan)
    }
}

impl BaselinePolicy for ScriptedCyberPolicy {
    fn score_kind(&self) -> ScoreKind {
        ScoreKind::Probability
    }

    fn action_count(&self) -> usize {
        use crate::mdp::GenerativeModel;
        self.env.action_count()
    }

    fn input_dim(&self) -> usize {
        use crate::mdp::GenerativeModel;
        self.env.state_dim()
    }

    fn scores(&self, query: Query<'_>) -> Vec<f64> {
        let action = match query {
            Query::Belief(b) => self.choose(b),
            Query::State(s) => self.choose(&Belief::point_mass(s.clone())),
        };
        let mut out = vec![0.0; self.action_count()];
        out[self.env.encode(action).0] = 1.0;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CyberParams;
    use crate::mdp::GenerativeModel;

    fn setup() -> (CyberEnv, ScriptedCyberPolicy) {
        let env = CyberEnv::new(CyberParams::default()).unwrap();
        (env.clone(), ScriptedCyberPolicy::new(env))
    }

    #[test]
    fn uniform_prior_scans_first_lan() {
        let (env, pol) = setup();
        let b = env.initial_belief().unwrap();
        assert_eq!(pol.choose(&b), CyberAction::ScanLan(0));
    }

    #[test]
    fn confident_compromise_is_cleaned() {
        let (env, pol) = setup();
        let ws = env.workstation(2, 3);
        let b = Belief::point_mass(env.state_with(&[ws], 0));
        assert_eq!(pol.choose(&b), CyberAction::Clean(ws));
        let s = pol.scores(Query::Belief(&b));
        assert_eq!(s.iter().sum::<f64>(), 1.0);
        assert_eq!(s[env.encode(CyberAction::Clean(ws)).0], 1.0);
    }

    #[test]
    fn heaviest_lan_is_scanned() {
        let (env, pol) = setup();
        let states = vec![
            env.state_with(&[env.workstation(1, 0)], 0),
            env.state_with(&[env.workstation(1, 1)], 0),
            env.state_with(&[env.workstation(3, 0)], 0),
        ];
        let b = Belief::uniform(states).unwrap();
        assert_eq!(pol.choose(&b), CyberAction::ScanLan(1));
    }
}
