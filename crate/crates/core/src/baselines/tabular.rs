//! Tabular action values: value iteration, binary persistence, and text
//! score-table import.

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mdp::{ActionId, BaselinePolicy, GenerativeModel, Query, ScoreKind, StateVector};

/// One outcome of `(state, action)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub probability: f64,
    pub next: usize,
    pub reward: f64,
    /// Entering `next` ends the episode.
    pub done: bool,
}

/// An MDP whose transition distribution can be enumerated exactly.
pub trait EnumerableMdp: Send + Sync {
    fn state_count(&self) -> usize;
    fn action_count(&self) -> usize;
    fn discount(&self) -> f64;
    fn is_terminal_index(&self, s: usize) -> bool;
    fn transitions(&self, s: usize, action: ActionId) -> Vec<Transition>;
    /// Maps a state vector to its enumeration index.
    fn state_index(&self, state: &StateVector) -> Option<usize>;
    fn state_dim(&self) -> usize;
}

/// Per-state action values over an enumerated state space, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn new(n_states: usize, n_actions: usize, discount: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Format(format!(
                "expected {} values, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("value table contains non-finite entries".into()));
        }
        Ok(Self { n_states, n_actions, discount, values })
    }

    pub fn q(&self, s: usize, a: ActionId) -> f64 {
        self.values[s * self.n_actions + a.0]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn value(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    const MAGIC: &'static [u8; 4] = b"PTVT";
    const VERSION: u16 = 1;

    /// Writes the binary form: magic `PTVT`, `u16` version, `u16` reserved,
    /// `u64` states, `u64` actions, `f64` discount, then the values. All
    /// little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&0u16.to_le_bytes())?;
        w.write_all(&(self.n_states as u64).to_le_bytes())?;
        w.write_all(&(self.n_actions as u64).to_le_bytes())?;
        w.write_all(&self.discount.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a value table (bad magic)".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != Self::VERSION {
            return Err(Error::Format(format!("unsupported value table version {version}")));
        }
        r.read_exact(&mut b2)?;
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n_states = next_u64(&mut r)? as usize;
        let n_actions = next_u64(&mut r)? as usize;
        let discount = f64::from_bits(next_u64(&mut r)?);
        let total = n_states
            .checked_mul(n_actions)
            .ok_or_else(|| Error::Format("value table dimensions overflow".into()))?;
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(f64::from_bits(next_u64(&mut r)?));
        }
        Self::new(n_states, n_actions, discount, values)
    }
}

/// Reads an external score table.
///
/// One record per line: `state_index, score_0, ..., score_{A-1}`, separated
/// by commas and/or whitespace. Lines starting with `#` are comments, except
/// `# discount = <x>` which sets the table's discount (default 1). Every
/// index in `0..n` must appear exactly once.
pub fn read_score_table(r: impl BufRead) -> Result<ValueTable> {
    let mut discount = 1.0;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "discount" {
                    discount = v.trim().parse().map_err(|_| {
                        Error::Format(format!("line {}: bad discount `{}`", lineno + 1, v.trim()))
                    })?;
                }
            }
            continue;
        }
        let mut fields = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty());
        let bad = |f: &str| Error::Format(format!("line {}: cannot parse `{f}`", lineno + 1));
        let idx_field = fields.next().ok_or_else(|| bad(line))?;
        let idx: usize = idx_field.parse().map_err(|_| bad(idx_field))?;
        let scores = fields.map(|f| f.parse::<f64>().map_err(|_| bad(f))).collect::<Result<Vec<_>>>()?;
        rows.push((idx, scores));
    }
    if rows.is_empty() {
        return Err(Error::Format("score table has no records".into()));
    }
    let n_actions = rows[0].1.len();
    if n_actions == 0 || rows.iter().any(|(_, s)| s.len() != n_actions) {
        return Err(Error::Format("every record needs the same positive number of scores".into()));
    }
    let n_states = rows.len();
    let mut values = vec![f64::NAN; n_states * n_actions];
    let mut seen = vec![false; n_states];
    for (idx, scores) in rows {
        if idx >= n_states || seen[idx] {
            return Err(Error::Format(format!("state index {idx} is out of range or repeated")));
        }
        seen[idx] = true;
        values[idx * n_actions..(idx + 1) * n_actions].copy_from_slice(&scores);
    }
    ValueTable::new(n_states, n_actions, discount, values)
}

pub fn write_score_table(table: &ValueTable, mut w: impl Write) -> Result<()> {
    writeln!(w, "# discount = {}", table.discount)?;
    for s in 0..table.n_states {
        let row: Vec<String> = table.row(s).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{s},{}", row.join(","))?;
    }
    Ok(())
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub sweeps: usize,
    /// Sup-norm change of V after each sweep.
    pub residuals: Vec<f64>,
}

fn backup(mdp: &dyn EnumerableMdp, v: &[f64], s: usize, a: ActionId) -> f64 {
    let gamma = mdp.discount();
    mdp.transitions(s, a)
        .iter()
        .map(|t| t.probability * (t.reward + if t.done { 0.0 } else { gamma * v[t.next] }))
        .sum()
}

/// Synchronous value iteration until the sup-norm change of V is at most
/// `tol`. Terminal states keep value 0.
pub fn solve(mdp: &dyn EnumerableMdp, tol: f64, max_sweeps: usize) -> Result<(ValueTable, SolveReport)> {
    let n = mdp.state_count();
    let na = mdp.action_count();
    let mut v = vec![0.0; n];
    let mut residuals = Vec::new();
    for _ in 0..max_sweeps {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if mdp.is_terminal_index(s) {
                    0.0
                } else {
                    (0..na).map(|a| backup(mdp, &v, s, ActionId(a))).fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        residuals.push(residual);
        if !residual.is_finite() {
            return Err(Error::InvalidConfig("value iteration diverged".into()));
        }
        if residual <= tol {
            break;
        }
    }
    let values = (0..n)
        .flat_map(|s| {
            let v = &v;
            (0..na).map(move |a| if mdp.is_terminal_index(s) { 0.0 } else { backup(mdp, v, s, ActionId(a)) })
        })
        .collect();
    let table = ValueTable::new(n, na, mdp.discount(), values)?;
    Ok((table, SolveReport { sweeps: residuals.len(), residuals }))
}

/// Value iteration on any model that exposes an exact transition model.
pub fn value_iteration(model: &dyn GenerativeModel, tol: f64) -> Result<ValueTable> {
    let mdp = model
        .as_enumerable()
        .ok_or_else(|| Error::UnsupportedEnvironment("environment does not expose exact transitions".into()))?;
    Ok(solve(mdp, tol, 1_000_000)?.0)
}

/// `max_s |max_a Q(s,a) - max_a (T Q)(s,a)|`, the Bellman optimality residual
/// of the stored values.
pub fn bellman_residual(mdp: &dyn EnumerableMdp, table: &ValueTable) -> f64 {
    let v: Vec<f64> = (0..table.n_states)
        .map(|s| if mdp.is_terminal_index(s) { 0.0 } else { table.value(s) })
        .collect();
    (0..table.n_states)
        .filter(|&s| !mdp.is_terminal_index(s))
        .map(|s| {
            let best = (0..table.n_actions)
                .map(|a| backup(mdp, &v, s, ActionId(a)))
                .fold(f64::NEG_INFINITY, f64::max);
            (best - v[s]).abs()
        })
        .fold(0.0, f64::max)
}

/// Greedy policy over a [`ValueTable`]. For belief queries the scores are
/// belief-weighted action values.
#[derive(Clone)]
pub struct TablePolicy {
    table: Arc<ValueTable>,
    indexer: Arc<dyn EnumerableMdp>,
}

impl TablePolicy {
    pub fn new(table: ValueTable, indexer: Arc<dyn EnumerableMdp>) -> Result<Self> {
        if table.n_states != indexer.state_count() || table.n_actions != indexer.action_count() {
            return Err(Error::DimensionMismatch {
                expected: indexer.state_count() * indexer.action_count(),
                actual: table.n_states * table.n_actions,
            });
        }
        Ok(Self { table: Arc::new(table), indexer })
    }

    pub fn table(&self) -> &ValueTable {
        &self.table
    }

    fn row_for(&self, s: &StateVector) -> &[f64] {
        let idx = self.indexer.state_index(s).expect("state outside the enumerated space");
        self.table.row(idx)
    }
}

impl BaselinePolicy for TablePolicy {
    fn score_kind(&self) -> ScoreKind {
        ScoreKind::ActionValue
    }

    fn action_count(&self) -> usize {
        self.table.n_actions
    }

    fn input_dim(&self) -> usize {
        self.indexer.state_dim()
    }

    fn scores(&self, query: Query<'_>) -> Vec<f64> {
        match query {
            Query::State(s) => self.row_for(s).to_vec(),
            Query::Belief(b) => {
                let mut out = vec![0.0; self.table.n_actions];
                for (s, w) in b.iter() {
                    for (o, q) in out.iter_mut().zip(self.row_for(s)) {
                        *o += w * q;
                    }
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridWorld, GridWorldParams};

    #[test]
    fn binary_round_trip() {
        let t = ValueTable::new(2, 3, 0.9, vec![1.0, -2.5, 3.25, 0.0, 1e-300, -7.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PTVT");
        assert_eq!(ValueTable::read_from(&buf[..]).unwrap(), t);
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        let t = ValueTable::new(1, 1, 1.0, vec![1.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert!(ValueTable::read_from(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(ValueTable::read_from(&buf[..]).is_err());
    }

    #[test]
    fn score_table_parsing() {
        let text = "# external policy\n# discount = 0.9\n1, 0.5, 0.25\n0 1.0 2.0\n";
        let t = read_score_table(text.as_bytes()).unwrap();
        assert_eq!(t.discount, 0.9);
        assert_eq!(t.row(0), &[1.0, 2.0]);
        assert_eq!(t.row(1), &[0.5, 0.25]);
        let mut out = Vec::new();
        write_score_table(&t, &mut out).unwrap();
        assert_eq!(read_score_table(&out[..]).unwrap(), t);
    }

    #[test]
    fn score_table_errors() {
        assert!(read_score_table("0,1,2\n0,3,4\n".as_bytes()).is_err());
        assert!(read_score_table("0,1,2\n1,3\n".as_bytes()).is_err());
        assert!(read_score_table("0,x\n".as_bytes()).is_err());
        assert!(read_score_table("".as_bytes()).is_err());
    }

    #[test]
    fn goal_value_is_zero() {
        let g = GridWorld::new(GridWorldParams::corridor(3)).unwrap();
        let (t, _) = solve(&g, 1e-12, 1000).unwrap();
        assert_eq!(t.value(2), 0.0);
    }

    #[test]
    fn residuals_shrink() {
        let g = GridWorld::new(GridWorldParams::default()).unwrap();
        let (_, report) = solve(&g, 1e-10, 100_000).unwrap();
        assert!(report.residuals.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
