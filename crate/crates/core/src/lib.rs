//! Deep-reinforcement-learning trading laboratory.
//!
//! A portfolio environment whose observation is a sliding window of daily
//! feature vectors, an optional ticker-block permutation of those vectors, a
//! two-convolution + batch-norm (or MLP) actor-critic with hand-written
//! backward passes, and a PPO trainer.

pub mod data;
pub mod env;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod ppo;
