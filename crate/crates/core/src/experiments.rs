//! Grid-world parameter sweeps and policy comparisons.
//!
//! A trial runs the tree-guided controller and the plain baseline on the same
//! episode seed and records the relative change in return,
//! `(tree - baseline) / |baseline| * 100`, together with the first tree's
//! mean leaf depth.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{solve, TablePolicy};
use crate::env::{GridWorld, GridWorldParams};
use crate::error::{Error, Result};
use crate::exec::{run_baseline_episode, run_episode, run_random_episode, ControllerConfig};
use crate::mdp::{BaselinePolicy, GenerativeModel};
use crate::par::{self, Execution};
use crate::rng::SeedStream;
use crate::tree::BuildConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Grid transition success probability.
    P,
    NActions,
    DeltaStar,
    DMax,
    NParticles,
    NMin,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::P => "p",
            SweepParam::NActions => "n_actions",
            SweepParam::DeltaStar => "delta_star",
            SweepParam::DMax => "d_max",
            SweepParam::NParticles => "n_particles",
            SweepParam::NMin => "n_min",
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, SweepParam::P | SweepParam::DeltaStar)
    }

    /// Applies `value` to copies of the base settings.
    pub fn apply(self, value: f64, grid: &GridWorldParams, build: &BuildConfig) -> Result<(GridWorldParams, BuildConfig)> {
        if self.is_integer() && (value.fract() != 0.0 || value < 0.0) {
            return Err(Error::InvalidConfig(format!("{} takes whole numbers, got {value}", self.name())));
        }
        let (mut g, mut b) = (grid.clone(), build.clone());
        match self {
            SweepParam::P => g.p_success = value,
            SweepParam::NActions => g.n_actions = value as usize,
            SweepParam::DeltaStar => b.delta_star = value,
            SweepParam::DMax => b.d_max = value as usize,
            SweepParam::NParticles => b.n_particles = value as usize,
            SweepParam::NMin => b.n_min = value as usize,
        }
        Ok((g, b))
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "p" | "p_success" => SweepParam::P,
            "n_actions" | "actions" => SweepParam::NActions,
            "delta_star" | "delta" => SweepParam::DeltaStar,
            "d_max" => SweepParam::DMax,
            "n_particles" => SweepParam::NParticles,
            "n_min" => SweepParam::NMin,
            other => return Err(Error::InvalidConfig(format!("unknown sweep parameter `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub grid: GridWorldParams,
    pub build: BuildConfig,
    pub controller: ControllerConfig,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Stopping tolerance for the value-iteration baseline.
    pub vi_tolerance: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            grid: GridWorldParams::default(),
            build: BuildConfig::default(),
            controller: ControllerConfig::default(),
            param: SweepParam::P,
            values: vec![0.5, 0.7, 0.9, 1.0],
            trials: 500,
            seed: 0,
            vi_tolerance: 1e-10,
        }
    }
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    /// Uses the sample standard deviation; `se` is 0 for fewer than two values.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { mean, se: 0.0, n };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self { mean, se: (var / n as f64).sqrt(), n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub tree_return: f64,
    pub baseline_return: f64,
    pub leaf_depth: f64,
}

impl Trial {
    pub fn relative_change(&self) -> Option<f64> {
        (self.baseline_return != 0.0)
            .then(|| (self.tree_return - self.baseline_return) / self.baseline_return.abs() * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub relative_change: MeanSe,
    pub leaf_depth: MeanSe,
    pub tree_return: MeanSe,
    pub baseline_return: MeanSe,
    /// Trials left out of the relative change because the baseline return
    /// was exactly zero.
    pub excluded: usize,
}

impl SweepRow {
    pub fn from_trials(param: SweepParam, value: f64, trials: &[Trial]) -> Self {
        let rel: Vec<f64> = trials.iter().filter_map(Trial::relative_change).collect();
        let col = |f: fn(&Trial) -> f64| MeanSe::of(&trials.iter().map(f).collect::<Vec<_>>());
        Self {
            param,
            value,
            excluded: trials.len() - rel.len(),
            relative_change: MeanSe::of(&rel),
            leaf_depth: col(|t| t.leaf_depth),
            tree_return: col(|t| t.tree_return),
            baseline_return: col(|t| t.baseline_return),
        }
    }
}

/// Seed of trial `i` in a sweep; shared by every row so rows are paired.
pub fn trial_seed(seed: u64, i: usize) -> u64 {
    SeedStream::new(seed).derive(i as u64).value()
}

/// Paired tree-vs-baseline trials on one environment.
pub fn run_trials(
    model: &dyn GenerativeModel,
    policy: &dyn BaselinePolicy,
    build: &BuildConfig,
    controller: &ControllerConfig,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Trial>> {
    par::map_range(trials, exec, |i| {
        let s = trial_seed(seed, i);
        let tree = run_episode(model, policy, build, controller, s)?;
        let base = run_baseline_episode(model, policy, controller.max_steps, s)?;
        Ok(Trial {
            seed: s,
            tree_return: tree.total_return,
            baseline_return: base.total_return,
            leaf_depth: tree.tree_leaf_depth.unwrap_or(0.0),
        })
    })
    .into_iter()
    .collect()
}

/// Value-iteration policy for a grid world.
pub fn grid_policy(grid: &GridWorldParams, tol: f64) -> Result<(Arc<GridWorld>, TablePolicy)> {
    let g = Arc::new(GridWorld::new(grid.clone())?);
    let (table, _) = solve(g.as_ref(), tol, 1_000_000)?;
    let policy = TablePolicy::new(table, g.clone())?;
    Ok((g, policy))
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    spec.controller.validate()?;
    spec.values
        .iter()
        .map(|&v| {
            let (grid, build) = spec.param.apply(v, &spec.grid, &spec.build)?;
            let (model, policy) = grid_policy(&grid, spec.vi_tolerance)?;
            let trials =
                run_trials(model.as_ref(), &policy, &build, &spec.controller, spec.trials, spec.seed, build.execution)?;
            Ok(SweepRow::from_trials(spec.param, v, &trials))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Plain,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "text" => Ok(TableFormat::Plain),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown table format `{other}`"))),
        }
    }
}

fn pm(m: &MeanSe) -> String {
    let fix = |x: f64| {
        let s = format!("{x:.1}");
        if s == "-0.0" { "0.0".to_string() } else { s }
    };
    format!("{} ± {}", fix(m.mean), fix(m.se))
}

/// Renders sweep rows. The plain form mirrors the usual results table:
/// `value  change ± se  depth ± se`.
pub fn emit_table(rows: &[SweepRow], format: TableFormat) -> String {
    let mut out = String::new();
    let name = rows.first().map_or("value", |r| r.param.name());
    match format {
        TableFormat::Plain => {
            let _ = writeln!(out, "{:<12} {:>16} {:>12} {:>8}", name, "change (%)", "leaf depth", "trials");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:<12} {:>16} {:>12} {:>8}",
                    r.value,
                    pm(&r.relative_change),
                    pm(&r.leaf_depth),
                    r.relative_change.n
                );
            }
        }
        TableFormat::Csv => {
            let _ = writeln!(
                out,
                "{name},change_mean,change_se,leaf_depth_mean,leaf_depth_se,tree_return_mean,baseline_return_mean,trials,excluded"
            );
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.value,
                    r.relative_change.mean,
                    r.relative_change.se,
                    r.leaf_depth.mean,
                    r.leaf_depth.se,
                    r.tree_return.mean,
                    r.baseline_return.mean,
                    r.relative_change.n,
                    r.excluded
                );
            }
        }
    }
    out
}

/// Mean returns of the tree controller, the baseline, and uniform random
/// actions over the same episode seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub tree: MeanSe,
    pub baseline: MeanSe,
    pub random: MeanSe,
    pub leaf_depth: MeanSe,
}

pub fn compare_policies(
    model: &dyn GenerativeModel,
    policy: &dyn BaselinePolicy,
    build: &BuildConfig,
    controller: &ControllerConfig,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Comparison> {
    let paired = run_trials(model, policy, build, controller, trials, seed, exec)?;
    let random: Vec<f64> = par::map_range(trials, exec, |i| {
        run_random_episode(model, controller.max_steps, trial_seed(seed, i)).map(|r| r.total_return)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(Comparison {
        tree: MeanSe::of(&paired.iter().map(|t| t.tree_return).collect::<Vec<_>>()),
        baseline: MeanSe::of(&paired.iter().map(|t| t.baseline_return).collect::<Vec<_>>()),
        random: MeanSe::of(&random),
        leaf_depth: MeanSe::of(&paired.iter().map(|t| t.leaf_depth).collect::<Vec<_>>()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_matches_hand_computation() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[7.0]).se, 0.0);
    }

    #[test]
    fn zero_baseline_is_excluded() {
        let t = |tree, base| Trial { seed: 0, tree_return: tree, baseline_return: base, leaf_depth: 1.0 };
        let row = SweepRow::from_trials(SweepParam::P, 0.9, &[t(-11.0, -10.0), t(1.0, 0.0), t(-9.0, -10.0)]);
        assert_eq!(row.excluded, 1);
        assert_eq!(row.relative_change.mean, 0.0);
        assert_eq!(row.relative_change.n, 2);
    }

    #[test]
    fn plain_table_formatting() {
        let row = SweepRow {
            param: SweepParam::P,
            value: 0.9,
            relative_change: MeanSe { mean: -4.44, se: 1.04, n: 500 },
            leaf_depth: MeanSe { mean: 4.2, se: 0.05, n: 500 },
            tree_return: MeanSe::default(),
            baseline_return: MeanSe::default(),
            excluded: 0,
        };
        let text = emit_table(std::slice::from_ref(&row), TableFormat::Plain);
        assert!(text.contains("-4.4 ± 1.0"), "{text}");
        let zero = SweepRow { relative_change: MeanSe { mean: -0.0, se: 0.0, n: 500 }, ..row };
        assert!(emit_table(&[zero], TableFormat::Plain).contains("0.0 ± 0.0"));
    }

    #[test]
    fn sweep_param_validation() {
        let g = GridWorldParams::default();
        let b = BuildConfig::default();
        assert!(SweepParam::NActions.apply(8.5, &g, &b).is_err());
        let (g2, _) = SweepParam::NActions.apply(8.0, &g, &b).unwrap();
        assert_eq!(g2.n_actions, 8);
        assert!("bogus".parse::<SweepParam>().is_err());
    }
}
