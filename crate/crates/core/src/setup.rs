//! Environment and baseline construction from serialized parameters.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{fitted_q, solve, FittedQConfig, ScriptedCyberPolicy, TablePolicy, VaccineLookahead};
use crate::env::{params_from_toml, CyberEnv, CyberParams, EnvKind, GridWorld, GridWorldParams, SirdParams, VaccineEnv};
use crate::error::{Error, Result};
use crate::mdp::{BaselinePolicy, GenerativeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    ValueIteration,
    FittedQ,
    Lookahead,
    Scripted,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value_iteration" | "vi" => Ok(BaselineKind::ValueIteration),
            "fitted_q" | "fq" => Ok(BaselineKind::FittedQ),
            "lookahead" => Ok(BaselineKind::Lookahead),
            "scripted" => Ok(BaselineKind::Scripted),
            other => Err(Error::InvalidConfig(format!("unknown baseline `{other}`"))),
        }
    }
}

impl EnvKind {
    pub fn default_baseline(self) -> BaselineKind {
        match self {
            EnvKind::Grid => BaselineKind::ValueIteration,
            EnvKind::Vaccine => BaselineKind::FittedQ,
            EnvKind::Cyber => BaselineKind::Scripted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum EnvParams {
    Grid(GridWorldParams),
    Vaccine(SirdParams),
    Cyber(CyberParams),
}

impl EnvParams {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvParams::Grid(_) => EnvKind::Grid,
            EnvParams::Vaccine(_) => EnvKind::Vaccine,
            EnvParams::Cyber(_) => EnvKind::Cyber,
        }
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Grid => EnvParams::Grid(GridWorldParams::default()),
            EnvKind::Vaccine => EnvParams::Vaccine(SirdParams::default()),
            EnvKind::Cyber => EnvParams::Cyber(CyberParams::default()),
        }
    }

    /// `null` yields the defaults. Unknown keys are rejected.
    pub fn from_json(kind: EnvKind, value: serde_json::Value) -> Result<Self> {
        if value.is_null() {
            return Ok(Self::default_for(kind));
        }
        let bad = |e: serde_json::Error| Error::InvalidConfig(format!("invalid {kind} parameters: {e}"));
        Ok(match kind {
            EnvKind::Grid => EnvParams::Grid(serde_json::from_value(value).map_err(bad)?),
            EnvKind::Vaccine => EnvParams::Vaccine(serde_json::from_value(value).map_err(bad)?),
            EnvKind::Cyber => EnvParams::Cyber(serde_json::from_value(value).map_err(bad)?),
        })
    }

    pub fn from_toml(kind: EnvKind, text: &str) -> Result<Self> {
        Ok(match kind {
            EnvKind::Grid => EnvParams::Grid(params_from_toml(text)?),
            EnvKind::Vaccine => EnvParams::Vaccine(params_from_toml(text)?),
            EnvKind::Cyber => EnvParams::Cyber(params_from_toml(text)?),
        })
    }
}

/// A model together with the policy to be explained.
#[derive(Clone)]
pub struct Setup {
    pub model: Arc<dyn GenerativeModel>,
    pub policy: Arc<dyn BaselinePolicy>,
}

/// Builds the environment and trains or solves its baseline.
///
/// `fitted` and `training_seed` only matter for [`BaselineKind::FittedQ`].
pub fn instantiate(
    params: &EnvParams,
    baseline: BaselineKind,
    fitted: &FittedQConfig,
    training_seed: u64,
) -> Result<Setup> {
    let unsupported = || {
        Err(Error::UnsupportedEnvironment(format!(
            "baseline {baseline:?} is not available for the {} environment",
            params.kind()
        )))
    };
    match (params, baseline) {
        (EnvParams::Grid(p), BaselineKind::ValueIteration) => {
            let g = Arc::new(GridWorld::new(p.clone())?);
            let (table, _) = solve(g.as_ref(), 1e-10, 1_000_000)?;
            let policy = TablePolicy::new(table, g.clone())?;
            Ok(Setup { model: g, policy: Arc::new(policy) })
        }
        (EnvParams::Grid(p), BaselineKind::FittedQ) => {
            let g = GridWorld::new(p.clone())?;
            let (policy, _) = fitted_q::train(&g, fitted, training_seed)?;
            Ok(Setup { model: Arc::new(g), policy: Arc::new(policy) })
        }
        (EnvParams::Vaccine(p), BaselineKind::FittedQ) => {
            let env = VaccineEnv::new(p.clone())?;
            let (policy, _) = fitted_q::train(&env, fitted, training_seed)?;
            Ok(Setup { model: Arc::new(env), policy: Arc::new(policy) })
        }
        (EnvParams::Vaccine(p), BaselineKind::Lookahead) => {
            let env = VaccineEnv::new(p.clone())?;
            Ok(Setup { model: Arc::new(env), policy: Arc::new(VaccineLookahead::new(p)?) })
        }
        (EnvParams::Cyber(p), BaselineKind::Scripted) => {
            let env = CyberEnv::new(p.clone())?;
            Ok(Setup { policy: Arc::new(ScriptedCyberPolicy::new(env.clone())), model: Arc::new(env) })
        }
        _ => unsupported(),
    }
}
