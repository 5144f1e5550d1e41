//! Proximal policy optimization over the trading environment.

pub mod bandit;
mod config;
mod loss;
mod optim;
mod rollout;
mod trainer;

use thiserror::Error;

pub use config::{AgentSpec, ExtractorKind, FeatureOrder, PpoConfig, AGENT_NAMES};
pub use loss::{
    clipped_surrogate, gaussian_entropy, gaussian_log_prob, normalize_advantages, ppo_loss, ppo_loss_from_output,
    sample_action, sample_from_output, ActionSample, LossBatch, LossCoefficients, LossStats, LN_SQRT_2PI,
};
pub use optim::Adam;
pub use rollout::{compute_gae, ObservationStore, RolloutBuffer};
pub use trainer::{
    evaluate, refresh_batch_norm, train, train_with, update, EvaluationReport, TrainOutcome, UpdateStats,
};

use crate::env::EnvError;
use crate::metrics::MetricsError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
