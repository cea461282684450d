//! Local surrogate policy trees.
//!
//! A policy tree summarizes how a baseline control policy is expected to
//! act over the next few decisions from one starting condition. It is built
//! by simulating particles forward, grouping them by the action the
//! baseline would take, and recursing until groups become small or deep.

pub mod baselines;
pub mod env;
pub mod exec;
pub mod experiments;
pub mod export;
pub mod error;
pub mod mdp;
pub mod par;
pub mod rng;
pub mod setup;
pub mod tree;

pub use error::{Error, Result};
pub use mdp::{
    ActionId, BaselinePolicy, Belief, GenerativeModel, InitialCondition, Observation, Query, ScoreKind,
    StateVector,
};
pub use tree::{build_tree, BuildConfig, PolicyTree};
