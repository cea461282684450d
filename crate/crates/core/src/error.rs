use thiserror::Error;

use crate::mdp::ActionId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("score vector has length {actual}, expected {expected}")]
    ScoreLength { expected: usize, actual: usize },

    #[error("non-finite score for action {0}")]
    NonFiniteScore(usize),

    #[error("action {action:?} out of range for {count} actions")]
    InvalidAction { action: ActionId, count: usize },

    #[error("terminal initial state")]
    TerminalInitialState,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("unsupported environment: {0}")]
    UnsupportedEnvironment(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("format error: {0}")]
    Format(String),

    #[error("no rows to emit: {0}")]
    EmptyTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
