//! Live sessions. All methods here are blocking; the HTTP layer runs them on
//! the blocking pool.

use policy_tree::exec::{ActionSource, ExecutionState, Position, Recommendation};
use policy_tree::export::TreeDocument;
use policy_tree::setup::Setup;
use policy_tree::{ActionId, Error};
use serde::Serialize;

use crate::error::ApiError;
use crate::store::{ActMode, LoggedAction, SessionRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub action: ActionId,
    pub action_label: String,
    pub mode: ActMode,
    /// What the controller recommended before this step.
    pub recommended: Option<ActionId>,
    pub approved: bool,
    pub reward: f64,
    /// A new tree was built after this step.
    pub rebuilt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Finished,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub id: String,
    pub env: policy_tree::env::EnvKind,
    pub status: Status,
    pub step: usize,
    pub total_return: f64,
    pub recommended: Option<ActionId>,
    pub recommended_label: Option<String>,
    pub recommendation_source: Option<ActionSource>,
    pub position: Position,
    pub rebuilds: usize,
    pub tree: TreeDocument,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActOutcome {
    pub step: usize,
    pub action: ActionId,
    pub action_label: String,
    pub mode: ActMode,
    pub reward: f64,
    pub done: bool,
    pub rebuilt: bool,
    pub session: SessionView,
}

pub struct Session {
    pub record: SessionRecord,
    setup: Setup,
    exec: ExecutionState,
    recommendation: Option<Recommendation>,
    history: Vec<HistoryEntry>,
    doc: TreeDocument,
}

impl Session {
    /// Starts the session and replays any logged actions.
    pub fn open(record: SessionRecord, setup: Setup) -> Result<Self, ApiError> {
        let exec =
            ExecutionState::start(setup.model.as_ref(), setup.policy.as_ref(), &record.build, &record.controller, record.seed)?;
        let doc = TreeDocument::from_tree(&exec.tree, setup.model.as_ref());
        let log = record.actions.clone();
        let mut session = Session {
            record: SessionRecord { actions: Vec::new(), ..record },
            setup,
            exec,
            recommendation: None,
            history: Vec::new(),
            doc,
        };
        session.recommendation = session.exec.recommend(session.setup.model.as_ref(), session.setup.policy.as_ref())?;
        for entry in log {
            session.act(entry.action, entry.mode).map_err(|e| {
                ApiError::internal(format!("stored session {} does not replay: {}", session.record.id, e.message))
            })?;
        }
        Ok(session)
    }

    pub fn is_finished(&self) -> bool {
        self.exec.is_finished()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn tree(&self) -> &TreeDocument {
        &self.doc
    }

    pub fn view(&self) -> SessionView {
        let model = self.setup.model.as_ref();
        SessionView {
            id: self.record.id.clone(),
            env: self.record.env.kind(),
            status: if self.is_finished() { Status::Finished } else { Status::Active },
            step: self.exec.env.step_index,
            total_return: self.exec.env.total_return,
            recommended: self.recommendation.map(|r| r.action),
            recommended_label: self.recommendation.map(|r| model.action_label(r.action)),
            recommendation_source: self.recommendation.map(|r| r.source),
            position: self.exec.position,
            rebuilds: self.exec.rebuilds,
            tree: self.doc.clone(),
        }
    }

    /// Takes one step. Approving requires the recommended action.
    pub fn act(&mut self, action: ActionId, mode: ActMode) -> Result<ActOutcome, ApiError> {
        if self.is_finished() {
            return Err(ApiError::conflict("session is finished"));
        }
        let model = self.setup.model.as_ref();
        let policy = self.setup.policy.as_ref();
        if action.0 >= model.action_count() {
            return Err(Error::InvalidAction { action, count: model.action_count() }.into());
        }
        let recommended = self.recommendation.map(|r| r.action);
        if mode == ActMode::Approve && recommended != Some(action) {
            return Err(ApiError::conflict(format!(
                "approve expects the recommended action {}, got {}",
                recommended.map_or("none".to_string(), |a| a.0.to_string()),
                action.0
            )));
        }
        let result = self.exec.apply(model, action)?;
        let rebuilt = self.exec.refresh(model, policy)?;
        if rebuilt {
            self.doc = TreeDocument::from_tree(&self.exec.tree, model);
        }
        self.recommendation = self.exec.recommend(model, policy)?;
        let step = self.exec.env.step_index - 1;
        self.history.push(HistoryEntry {
            step,
            action,
            action_label: model.action_label(action),
            mode,
            recommended,
            approved: mode == ActMode::Approve,
            reward: result.reward,
            rebuilt,
        });
        self.record.actions.push(LoggedAction { action, mode });
        Ok(ActOutcome {
            step,
            action,
            action_label: model.action_label(action),
            mode,
            reward: result.reward,
            done: self.is_finished(),
            rebuilt,
            session: self.view(),
        })
    }
}
