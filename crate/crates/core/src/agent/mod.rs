//! The reinforcement-learning arbiter that decides which interaction to
//! request next.

mod network;
mod policy;
mod replay;
mod reward;
mod state;
mod train;

pub use network::{Gradient, NetShape, ParamBlock, QNetwork, RmsProp};
pub use policy::{epsilon_at, select_action};
pub use replay::{ReplayMemory, Transition};
pub use reward::{mean_distance, reward};
pub use state::{compute_proxies, Proxies, SearchState, StateShape};
pub use train::{
    policy_from_checkpoint, train, train_step, validate, Checkpoint, EpochLog, Greedy, TrainConfig, TrainOutcome, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("state shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss {loss} at update {update} (max |q| = {max_q:.3e}, max |target| = {max_target:.3e})")]
    NonFiniteLoss { loss: f64, update: u64, max_q: f64, max_target: f64 },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("catalog has {0} items; proxies need at least {1}")]
    TooFewItems(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// The three interactions the agent can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    FreeForm,
    Question,
    Sketch,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::FreeForm, Action::Question, Action::Sketch];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::FreeForm => "free_form",
            Action::Question => "question",
            Action::Sketch => "sketch",
        }
    }
}
