//! Learned high-level controller: a small Q-network trained with clipped
//! double-Q learning, softmax exploration and Polyak-averaged targets.

mod checkpoint;
mod dqn;
mod mlp;
mod replay;
mod task;
mod toy;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use dqn::{
    action_probabilities, greedy_action, polyak_update, sample_action, td_targets, train, ArgmaxNet, DqnAgent,
    DqnConfig, Exploration, RoundLog,
};
pub use mlp::{Adam, Dense, ForwardCache, LayerRecord, Mlp};
pub use replay::ReplayBuffer;
pub use task::{Environment, EnvStep, LearnedPolicy, TreadmillTask};
pub use toy::ToyMdp;

use thiserror::Error;

use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network shapes differ: {expected:?} vs {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("empty batch")]
    EmptyBatch,
    #[error("action id {0} out of range")]
    InvalidAction(usize),
    #[error("invalid DQN config: {0}")]
    InvalidConfig(String),
    #[error("training loss became non-finite after {samples} samples (update {update}): {diagnostics}")]
    NonFiniteLoss {
        samples: u64,
        update: u64,
        diagnostics: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint observation layout v{found} does not match the environment's v{expected}")]
    LayoutMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Sim(#[from] SimError),
}
