//! Task environments.

pub mod cyber;
pub mod grid;
pub mod sird;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cyber::{CyberEnv, CyberParams};
pub use grid::{GridWorld, GridWorldParams};
pub use sird::{SirdParams, VaccineEnv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Grid,
    Vaccine,
    Cyber,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(EnvKind::Grid),
            "vaccine" | "sird" => Ok(EnvKind::Vaccine),
            "cyber" => Ok(EnvKind::Cyber),
            other => Err(Error::UnsupportedEnvironment(format!("unknown environment kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvKind::Grid => "grid",
            EnvKind::Vaccine => "vaccine",
            EnvKind::Cyber => "cyber",
        })
    }
}

/// Parses environment parameters from TOML text. Unknown keys are rejected.
pub fn params_from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_params<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    params_from_toml(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_params_from_toml() {
        let p: GridWorldParams = params_from_toml(
            "width = 5\nheight = 4\np_success = 0.7\ngoals = [[4, 3]]\ntraps = [[2, 2]]\n",
        )
        .unwrap();
        assert_eq!(p.width, 5);
        assert_eq!(p.n_actions, 4);
        assert!(GridWorld::new(p).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = params_from_toml::<SirdParams>("betta = 0.3\n").unwrap_err();
        assert!(err.to_string().contains("betta"));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("grid".parse::<EnvKind>().unwrap(), EnvKind::Grid);
        assert!("maze".parse::<EnvKind>().is_err());
    }
}
