//! Stochastic grid world.
//!
//! Action `a` moves `a / 4 + 1` cells in direction `a % 4` (north, east,
//! south, west). The intended move happens with probability `p_success`;
//! otherwise a uniformly random action is executed instead. Moves are clamped
//! at the border. Every step costs `step_cost`; landing on a goal adds
//! `goal_reward` and ends the episode, landing on a trap adds
//! `trap_penalty` but does not.
//!
//! State layout: `[x, y, t]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{EnumerableMdp, Transition};
use crate::error::{Error, Result};
use crate::mdp::{ActionId, GenerativeModel, StateVector, StepResult, SummaryKind};
use crate::rng::SimRng;

pub type Cell = [i64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorldParams {
    pub width: i64,
    pub height: i64,
    pub n_actions: usize,
    pub p_success: f64,
    pub start: Cell,
    pub goals: Vec<Cell>,
    pub traps: Vec<Cell>,
    pub step_cost: f64,
    pub goal_reward: f64,
    pub trap_penalty: f64,
    pub max_steps: usize,
    pub discount: f64,
}

impl Default for GridWorldParams {
    fn default() -> Self {
        Self {
            width: 6,
            height: 6,
            n_actions: 4,
            p_success: 0.9,
            start: [0, 0],
            goals: vec![[2, 3]],
            traps: vec![[1, 1], [3, 2]],
            step_cost: -1.0,
            goal_reward: 10.0,
            trap_penalty: -5.0,
            max_steps: 100,
            discount: 0.95,
        }
    }
}

impl GridWorldParams {
    /// `width × 1` corridor with the goal at the east end and no traps.
    pub fn corridor(width: i64) -> Self {
        Self {
            width,
            height: 1,
            start: [0, 0],
            goals: vec![[width - 1, 0]],
            traps: vec![],
            p_success: 1.0,
            discount: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.width < 1 || self.height < 1 {
            return fail("grid dimensions must be positive".into());
        }
        if self.n_actions < 4 || !self.n_actions.is_multiple_of(4) {
            return fail(format!("n_actions must be a positive multiple of 4, got {}", self.n_actions));
        }
        if !(self.p_success > 0.0 && self.p_success <= 1.0) {
            return fail(format!("p_success must be in (0, 1], got {}", self.p_success));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return fail(format!("discount must be in (0, 1], got {}", self.discount));
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive".into());
        }
        if self.goals.is_empty() {
            return fail("at least one goal cell is required".into());
        }
        let in_bounds = |c: &Cell| c[0] >= 0 && c[0] < self.width && c[1] >= 0 && c[1] < self.height;
        for c in self.goals.iter().chain(&self.traps).chain(std::iter::once(&self.start)) {
            if !in_bounds(c) {
                return fail(format!("cell {c:?} is outside the grid"));
            }
        }
        if let Some(c) = self.goals.iter().find(|g| self.traps.contains(g)) {
            return fail(format!("cell {c:?} is both goal and trap"));
        }
        if self.goals.contains(&self.start) {
            return fail("start cell is a goal".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    params: GridWorldParams,
    goal: Vec<bool>,
    trap: Vec<bool>,
}

const DIRECTIONS: [&str; 4] = ["N", "E", "S", "W"];

impl GridWorld {
    pub fn new(params: GridWorldParams) -> Result<Self> {
        params.validate()?;
        let n = (params.width * params.height) as usize;
        let mut goal = vec![false; n];
        let mut trap = vec![false; n];
        let idx = |c: &Cell| (c[1] * params.width + c[0]) as usize;
        params.goals.iter().for_each(|c| goal[idx(c)] = true);
        params.traps.iter().for_each(|c| trap[idx(c)] = true);
        Ok(Self { params, goal, trap })
    }

    pub fn params(&self) -> &GridWorldParams {
        &self.params
    }

    pub fn start_state(&self) -> StateVector {
        StateVector::new(vec![self.params.start[0] as f64, self.params.start[1] as f64, 0.0])
    }

    pub fn cell_index(&self, x: i64, y: i64) -> usize {
        (y * self.params.width + x) as usize
    }

    pub fn cell_of(&self, state: &StateVector) -> (i64, i64) {
        (state[0].round() as i64, state[1].round() as i64)
    }

    pub fn is_goal(&self, x: i64, y: i64) -> bool {
        self.goal[self.cell_index(x, y)]
    }

    /// Landing cell of `action` from `(x, y)`, clamped to the grid.
    pub fn move_cell(&self, x: i64, y: i64, action: ActionId) -> (i64, i64) {
        let dist = (action.0 / 4 + 1) as i64;
        let (dx, dy) = match action.0 % 4 {
            0 => (0, 1),
            1 => (1, 0),
            2 => (0, -1),
            _ => (-1, 0),
        };
        let nx = (x + dx * dist).clamp(0, self.params.width - 1);
        let ny = (y + dy * dist).clamp(0, self.params.height - 1);
        (nx, ny)
    }

    fn landing_reward(&self, x: i64, y: i64) -> (f64, bool) {
        let i = self.cell_index(x, y);
        let mut r = self.params.step_cost;
        if self.goal[i] {
            r += self.params.goal_reward;
        }
        if self.trap[i] {
            r += self.params.trap_penalty;
        }
        (r, self.goal[i])
    }
}

impl GenerativeModel for GridWorld {
    fn action_count(&self) -> usize {
        self.params.n_actions
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.params.max_steps)
    }

    fn initial_state(&self, _rng: &mut SimRng) -> StateVector {
        self.start_state()
    }

    fn is_terminal(&self, state: &StateVector) -> bool {
        let (x, y) = self.cell_of(state);
        self.is_goal(x, y) || state[2] as usize >= self.params.max_steps
    }

    fn step(&self, state: &StateVector, action: ActionId, rng: &mut SimRng) -> StepResult {
        let (x, y) = self.cell_of(state);
        let executed = if rng.random::<f64>() < self.params.p_success {
            action
        } else {
            ActionId(rng.random_range(0..self.params.n_actions))
        };
        let (nx, ny) = self.move_cell(x, y, executed);
        let (reward, at_goal) = self.landing_reward(nx, ny);
        let t = state[2] + 1.0;
        StepResult {
            next_state: StateVector::new(vec![nx as f64, ny as f64, t]),
            observation: None,
            reward,
            done: at_goal || t as usize >= self.params.max_steps,
        }
    }

    fn action_label(&self, action: ActionId) -> String {
        format!("{}{}", DIRECTIONS[action.0 % 4], action.0 / 4 + 1)
    }

    fn summary_kind(&self) -> SummaryKind {
        SummaryKind::Mode
    }

    fn describe_state(&self, values: &[f64]) -> String {
        format!("({}, {}) t={}", values[0], values[1], values[2])
    }

    fn as_enumerable(&self) -> Option<&dyn EnumerableMdp> {
        Some(self)
    }
}

impl EnumerableMdp for GridWorld {
    fn state_count(&self) -> usize {
        self.goal.len()
    }

    fn action_count(&self) -> usize {
        self.params.n_actions
    }

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn is_terminal_index(&self, s: usize) -> bool {
        self.goal[s]
    }

    fn state_index(&self, state: &StateVector) -> Option<usize> {
        if state.len() != 3 {
            return None;
        }
        let (x, y) = self.cell_of(state);
        (x >= 0 && x < self.params.width && y >= 0 && y < self.params.height).then(|| self.cell_index(x, y))
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn transitions(&self, s: usize, action: ActionId) -> Vec<Transition> {
        let (x, y) = (s as i64 % self.params.width, s as i64 / self.params.width);
        let n = self.params.n_actions;
        let p = self.params.p_success;
        let mut out: Vec<Transition> = Vec::new();
        let mut push = |prob: f64, a: ActionId| {
            if prob <= 0.0 {
                return;
            }
            let (nx, ny) = self.move_cell(x, y, a);
            let next = self.cell_index(nx, ny);
            match out.iter_mut().find(|t| t.next == next) {
                Some(t) => t.probability += prob,
                None => {
                    let (reward, done) = self.landing_reward(nx, ny);
                    out.push(Transition { probability: prob, next, reward, done });
                }
            }
        };
        push(p, action);
        for a in 0..n {
            push((1.0 - p) / n as f64, ActionId(a));
        }
        out
    }
}
