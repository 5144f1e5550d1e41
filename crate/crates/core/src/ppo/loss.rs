use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PpoError;
use crate::nn::{ActorCritic, Array4, Mode, OutputGrads, PolicyOutput};

/// `ln(sqrt(2 * pi))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of `x` under a diagonal Gaussian.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), s)| {
            let z = (x - m) / s.exp();
            -0.5 * z * z - s - LN_SQRT_2PI
        })
        .sum()
}

/// Differential entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 + LN_SQRT_2PI).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    /// Unclipped draw; the environment clips when decoding.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// Draws an action for one observation window.
pub fn sample_action<R: Rng + ?Sized>(
    net: &ActorCritic,
    window: &[f64],
    rng: &mut R,
) -> Result<ActionSample, PpoError> {
    let out = net.infer(&net.batch_input([window])?)?;
    Ok(sample_from_output(&out, 0, rng))
}

pub fn sample_from_output<R: Rng + ?Sized>(out: &PolicyOutput, row: usize, rng: &mut R) -> ActionSample {
    let mean = out.mean_row(row);
    let action: Vec<f64> = mean
        .iter()
        .zip(&out.log_std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s.exp() * z
        })
        .collect();
    ActionSample {
        log_prob: gaussian_log_prob(&action, mean, &out.log_std),
        action,
        value: out.value[row],
    }
}

/// The clipped-surrogate term `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Rescales to mean 0 and unit sample standard deviation; batches of one
/// are left alone.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
    let denom = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / denom);
}

/// A minibatch of targets for the PPO objective.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    /// `(n, action_dim)` actions that were taken.
    pub actions: &'a [f64],
    pub old_log_probs: &'a [f64],
    /// Used as given; normalize beforehand if desired.
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples with `|r - 1| > eps`.
    pub clip_fraction: f64,
    /// Mean of `(r - 1) - ln r`.
    pub approx_kl: f64,
}

/// PPO loss of a forward pass and its gradient with respect to the outputs.
pub fn ppo_loss_from_output(
    out: &PolicyOutput,
    batch: LossBatch<'_>,
    coef: LossCoefficients,
) -> Result<(LossStats, OutputGrads), PpoError> {
    let n = out.batch;
    let d = out.action_dim();
    for (what, expected, got) in [
        ("actions", n * d, batch.actions.len()),
        ("old_log_probs", n, batch.old_log_probs.len()),
        ("advantages", n, batch.advantages.len()),
        ("returns", n, batch.returns.len()),
    ] {
        if expected != got {
            return Err(PpoError::Length { what, expected, got });
        }
    }
    let inv_n = 1.0 / n as f64;
    let inv_var: Vec<f64> = out.log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let mut grads = OutputGrads::zeros_like(out);
    let mut stats = LossStats::default();
    for i in 0..n {
        let a = &batch.actions[i * d..(i + 1) * d];
        let mean = out.mean_row(i);
        let log_prob = gaussian_log_prob(a, mean, &out.log_std);
        let log_ratio = log_prob - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        stats.policy_loss -= clipped_surrogate(ratio, adv, coef.clip_epsilon) * inv_n;
        if (ratio - 1.0).abs() > coef.clip_epsilon {
            stats.clip_fraction += inv_n;
        }
        stats.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;

        // d(-min(rA, clip(r)A))/d(log_prob) = -rA when the unclipped term is selected
        let clipped = ratio.clamp(1.0 - coef.clip_epsilon, 1.0 + coef.clip_epsilon);
        let g_logp = if ratio * adv <= clipped * adv {
            -ratio * adv * inv_n
        } else {
            0.0
        };
        if g_logp != 0.0 {
            for j in 0..d {
                let diff = a[j] - mean[j];
                grads.mean[i * d + j] = g_logp * diff * inv_var[j];
                grads.log_std[j] += g_logp * (diff * diff * inv_var[j] - 1.0);
            }
        }

        let err = out.value[i] - batch.returns[i];
        stats.value_loss += err * err * inv_n;
        grads.value[i] = coef.value_coef * 2.0 * err * inv_n;
    }
    stats.entropy = gaussian_entropy(&out.log_std);
    grads.log_std.iter_mut().for_each(|g| *g -= coef.entropy_coef);
    stats.loss = stats.policy_loss + coef.value_coef * stats.value_loss - coef.entropy_coef * stats.entropy;
    if !stats.loss.is_finite() {
        return Err(PpoError::NonFinite(format!("PPO loss {}", stats.loss)));
    }
    Ok((stats, grads))
}

/// Evaluates the PPO loss of `net` on a batch of windows.
pub fn ppo_loss(
    net: &ActorCritic,
    input: &Array4,
    batch: LossBatch<'_>,
    coef: LossCoefficients,
    mode: Mode,
) -> Result<LossStats, PpoError> {
    let (out, _) = net.forward(input, mode)?;
    ppo_loss_from_output(&out, batch, coef).map(|(s, _)| s)
}
