//! Reference policies to be explained.

pub mod fitted_q;
pub mod lookahead;
pub mod scripted;
pub mod tabular;

pub use fitted_q::{FittedQConfig, FittedQPolicy, Mlp};
pub use lookahead::VaccineLookahead;
pub use scripted::ScriptedCyberPolicy;
pub use tabular::{
    bellman_residual, read_score_table, solve, value_iteration, write_score_table, EnumerableMdp,
    SolveReport, TablePolicy, Transition, ValueTable,
};
