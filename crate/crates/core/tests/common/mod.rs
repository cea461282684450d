//! Strategies and structural checks shared by the property and acceptance
//! suites.

#![allow(dead_code)]

use std::sync::Arc;

use policy_tree::baselines::{solve, TablePolicy};
use policy_tree::env::{GridWorld, GridWorldParams};
use policy_tree::par::Execution;
use policy_tree::tree::DeltaAggregation;
use policy_tree::{build_tree, BuildConfig, InitialCondition, PolicyTree};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub struct Case {
    pub grid: GridWorldParams,
    pub build: BuildConfig,
}

pub fn grid_params() -> impl Strategy<Value = GridWorldParams> {
    (2i64..=5, 1i64..=4)
        .prop_flat_map(|(w, h)| {
            let cells = (w * h) as usize;
            (
                Just((w, h)),
                0..cells,
                0..cells,
                proptest::option::of(0..cells),
                0.5f64..=1.0,
                prop_oneof![Just(4usize), Just(8)],
                prop_oneof![Just(0.9), Just(1.0)],
            )
        })
        .prop_filter_map("start must not be the goal", |((w, h), s, g, t, p, n, gamma)| {
            let cell = |i: usize| [i as i64 % w, i as i64 / w];
            if s == g {
                return None;
            }
            let traps = t.filter(|&t| t != g).map(|t| vec![cell(t)]).unwrap_or_default();
            Some(GridWorldParams {
                width: w,
                height: h,
                start: cell(s),
                goals: vec![cell(g)],
                traps,
                p_success: p,
                n_actions: n,
                discount: gamma,
                max_steps: 30,
                ..GridWorldParams::default()
            })
        })
}

pub fn build_config() -> impl Strategy<Value = BuildConfig> {
    (5usize..=60)
        .prop_flat_map(|n| {
            (
                Just(n),
                1..=n,
                1usize..=6,
                prop_oneof![Just(0.0), 0.0f64..0.6],
                1usize..=5,
                any::<u64>(),
                prop_oneof![Just(DeltaAggregation::Mean), Just(DeltaAggregation::Sum)],
            )
        })
        .prop_map(|(n, n_min, d_max, delta_star, c_max, seed, agg)| BuildConfig {
            n_particles: n,
            n_min,
            d_max,
            delta_star,
            c_max,
            seed,
            delta_aggregation: agg,
            execution: Execution::Sequential,
        })
}

pub fn case() -> impl Strategy<Value = Case> {
    (grid_params(), build_config()).prop_map(|(grid, build)| Case { grid, build })
}

pub fn grid_setup(p: &GridWorldParams) -> (Arc<GridWorld>, TablePolicy) {
    let g = Arc::new(GridWorld::new(p.clone()).unwrap());
    let (table, _) = solve(g.as_ref(), 1e-9, 100_000).unwrap();
    let policy = TablePolicy::new(table, g.clone()).unwrap();
    (g, policy)
}

/// Checks every structural invariant and reports the first violation.
pub fn check_structure(tree: &PolicyTree, cfg: &BuildConfig) -> Result<(), String> {
    let root = tree.root();
    if root.reach_probability != 1.0 || root.particle_count() != cfg.n_particles {
        return Err("root must hold every particle".into());
    }
    for n in &tree.nodes {
        let kids: Vec<_> = tree.children(n.id).collect();
        if n.expanded {
            let below: usize = kids.iter().map(|c| c.particle_count()).sum();
            if below + n.terminated_count() != n.particle_count() {
                return Err(format!("node {} loses particles: {} -> {} + {}", n.id, n.particle_count(), below, n.terminated_count()));
            }
        }
        let mut actions: Vec<_> = kids.iter().map(|c| c.action).collect();
        actions.sort();
        actions.dedup();
        if actions.len() != kids.len() {
            return Err(format!("node {} has repeated child actions", n.id));
        }
        if kids.len() > cfg.c_max {
            return Err(format!("node {} has {} children, c_max {}", n.id, kids.len(), cfg.c_max));
        }
        for c in &kids {
            if c.reach_probability > n.reach_probability || c.depth != n.depth + 1 || c.particle_count() == 0 {
                return Err(format!("child {} of {} breaks reach or depth ordering", c.id, n.id));
            }
        }
        if n.is_leaf() {
            let justified = n.particle_count() < cfg.n_min
                || n.depth >= cfg.d_max
                || (n.expanded && n.terminated_count() == n.particle_count());
            if !justified {
                return Err(format!("leaf {} is unjustified", n.id));
            }
        }
        if n.depth > cfg.d_max {
            return Err(format!("node {} exceeds d_max", n.id));
        }
    }
    Ok(())
}

pub fn same_nodes(a: &PolicyTree, b: &PolicyTree) -> bool {
    a.nodes == b.nodes
}

/// Builds the case's tree three ways (twice sequentially, once in parallel)
/// and checks structure and reproducibility.
pub fn check_case(case: &Case) -> Result<(), String> {
    let (g, policy) = grid_setup(&case.grid);
    let init = InitialCondition::State(g.start_state());
    let tree = build_tree(g.as_ref(), &policy, init.clone(), &case.build).map_err(|e| e.to_string())?;
    check_structure(&tree, &case.build)?;
    let again = build_tree(g.as_ref(), &policy, init.clone(), &case.build).map_err(|e| e.to_string())?;
    if !same_nodes(&tree, &again) {
        return Err("same seed, different tree".into());
    }
    let par = BuildConfig { execution: Execution::Parallel, ..case.build.clone() };
    let tree_par = build_tree(g.as_ref(), &policy, init, &par).map_err(|e| e.to_string())?;
    if !same_nodes(&tree, &tree_par) {
        return Err("parallel build differs from sequential".into());
    }
    Ok(())
}
