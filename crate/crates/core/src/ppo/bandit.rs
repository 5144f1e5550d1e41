//! A two-armed contextual bandit for checking the policy-gradient direction.
//!
//! The observation is a one-hot context of width 2. A positive action pulls
//! arm 1, any other action pulls arm 0, and the arm matching the context pays 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::loss::sample_action;
use super::{update, Adam, PpoConfig, PpoError, RolloutBuffer};
use crate::nn::{init_params, ActorCritic, ExtractorSpec, MlpSpec, NetworkSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditReport {
    /// Optimal-arm probability after each update, averaged over contexts.
    pub probabilities: Vec<f64>,
    /// First update (1-based) whose probability reached the threshold.
    pub reached_at: Option<usize>,
}

impl BanditReport {
    pub fn final_probability(&self) -> f64 {
        self.probabilities.last().copied().unwrap_or(0.5)
    }
}

fn context_window(context: usize) -> [f64; 2] {
    let mut w = [0.0; 2];
    w[context] = 1.0;
    w
}

/// Probability that the current Gaussian policy pulls the paying arm.
pub fn optimal_probability(net: &ActorCritic) -> Result<f64, PpoError> {
    let mut total = 0.0;
    for context in 0..2 {
        let w = context_window(context);
        let out = net.infer(&net.batch_input([&w[..]])?)?;
        let z = out.mean[0] / out.log_std[0].exp();
        // P(a > 0) = Phi(z)
        let positive = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
        total += if context == 1 { positive } else { 1.0 - positive };
    }
    Ok(total / 2.0)
}

/// The PPO settings used by the bandit check.
pub fn bandit_config(seed: u64) -> PpoConfig {
    PpoConfig {
        rollout_length: 64,
        minibatch_size: 32,
        epochs_per_update: 4,
        learning_rate: 3e-3,
        gamma: 0.0,
        seed,
        ..PpoConfig::default()
    }
}

/// Trains a linear Gaussian policy for `updates` rounds of PPO.
pub fn run_contextual_bandit(config: &PpoConfig, updates: usize, threshold: f64) -> Result<BanditReport, PpoError> {
    config.validate()?;
    let spec = NetworkSpec::new(1, 2, 1, ExtractorSpec::Mlp(MlpSpec { hidden: vec![] }));
    let mut net = init_params(config.seed, &spec)?;
    let mut optimizer = Adam::new(&net, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut buffer = RolloutBuffer::new(1, 2, 1);
    let mut probabilities = Vec::with_capacity(updates);
    let mut reached_at = None;
    for u in 0..updates {
        buffer.clear();
        for _ in 0..config.rollout_length {
            let context = rng.random_range(0..2usize);
            let w = context_window(context);
            let s = sample_action(&net, &w, &mut rng)?;
            let arm = usize::from(s.action[0] > 0.0);
            let reward = if arm == context { 1.0 } else { 0.0 };
            buffer.push(&w, false, &s.action, s.log_prob, s.value, reward, true)?;
        }
        buffer.finish(0.0, config.gamma, config.gae_lambda)?;
        update(&mut net, &mut optimizer, &buffer, config, &mut rng)?;
        let p = optimal_probability(&net)?;
        if reached_at.is_none() && p >= threshold {
            reached_at = Some(u + 1);
        }
        probabilities.push(p);
    }
    Ok(BanditReport {
        probabilities,
        reached_at,
    })
}
