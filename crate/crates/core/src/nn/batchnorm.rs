use serde::{Deserialize, Serialize};

use super::{Array4, Mode, NnError};

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(batch, height, width)`.
///
/// Normalization uses the biased batch variance; the running variance is
/// updated with the unbiased one: `running = (1 - m) * running + m * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Saved forward state for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    mode: Mode,
    x_hat: Array4,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    /// Unbiased batch variance (train mode only).
    batch_var_unbiased: Vec<f64>,
}

impl BnCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch `(mean, unbiased variance)` per channel, train mode only.
    pub fn batch_stats(&self) -> Option<(&[f64], &[f64])> {
        (self.mode == Mode::Train).then_some((&self.batch_mean, &self.batch_var_unbiased))
    }
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_BN_MOMENTUM,
            epsilon: DEFAULT_BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x`. Train mode uses batch statistics and leaves the running
    /// statistics untouched; apply them with [`BatchNorm2d::commit`].
    pub fn forward(&self, x: &Array4, mode: Mode) -> Result<(Array4, BnCache), NnError> {
        let [n, c, h, w] = x.shape();
        if c != self.channels() {
            return Err(NnError::Shape(format!(
                "batch norm has {} channels, input has {c}",
                self.channels()
            )));
        }
        let count = n * h * w;
        let plane = h * w;
        let xd = x.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut var_unbiased = vec![0.0; c];
        match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(NnError::Shape(format!(
                        "train-mode batch norm needs at least 2 values per channel, got {count}"
                    )));
                }
                for ch in 0..c {
                    let mut sum = 0.0;
                    for b in 0..n {
                        sum += xd[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
                    }
                    let m = sum / count as f64;
                    let mut ss = 0.0;
                    for b in 0..n {
                        ss += xd[(b * c + ch) * plane..][..plane]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / count as f64;
                    var_unbiased[ch] = ss / (count - 1) as f64;
                }
            }
            Mode::Inference => {
                mean.copy_from_slice(&self.running_mean);
                var.copy_from_slice(&self.running_var);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut x_hat = Array4::zeros(x.shape());
        let mut y = Array4::zeros(x.shape());
        {
            let xh = x_hat.data_mut();
            let yd = y.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for k in off..off + plane {
                        let v = (xd[k] - mean[ch]) * inv_std[ch];
                        xh[k] = v;
                        yd[k] = self.gamma[ch] * v + self.beta[ch];
                    }
                }
            }
        }
        Ok((
            y,
            BnCache {
                mode,
                x_hat,
                inv_std,
                batch_mean: mean,
                batch_var_unbiased: var_unbiased,
            },
        ))
    }

    /// Folds a train-mode cache's batch statistics into the running averages.
    pub fn commit(&mut self, cache: &BnCache) {
        if let Some((mean, var)) = cache.batch_stats() {
            let m = self.momentum;
            for ch in 0..self.channels() {
                self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * mean[ch];
                self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * var[ch];
            }
        }
    }

    pub fn backward(&self, cache: &BnCache, grad_out: &Array4) -> Result<(Array4, BnGrads), NnError> {
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(NnError::Shape(format!(
                "batch norm upstream gradient {:?} does not match cached input {:?}",
                grad_out.shape(),
                cache.x_hat.shape()
            )));
        }
        let [n, c, h, w] = grad_out.shape();
        let plane = h * w;
        let count = (n * plane) as f64;
        let g = grad_out.data();
        let xh = cache.x_hat.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for k in off..off + plane {
                    dbeta[ch] += g[k];
                    dgamma[ch] += g[k] * xh[k];
                }
            }
        }
        let mut gx = Array4::zeros(grad_out.shape());
        let gxd = gx.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let scale = self.gamma[ch] * cache.inv_std[ch];
                match cache.mode {
                    Mode::Train => {
                        for k in off..off + plane {
                            gxd[k] = scale / count * (count * g[k] - dbeta[ch] - xh[k] * dgamma[ch]);
                        }
                    }
                    Mode::Inference => {
                        for k in off..off + plane {
                            gxd[k] = scale * g[k];
                        }
                    }
                }
            }
        }
        Ok((
            gx,
            BnGrads {
                gamma: dgamma,
                beta: dbeta,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_difference, max_relative_error};
    use rand::{Rng, SeedableRng};

    fn random(shape: [usize; 4], seed: u64) -> Array4 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Array4::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0..3.0)).collect()).unwrap()
    }

    fn channel_moments(y: &Array4, ch: usize) -> (f64, f64) {
        let [n, c, h, w] = y.shape();
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| y.data()[(b * c + ch) * h * w..][..h * w].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn constant_input_maps_to_zero() {
        let bn = BatchNorm2d::new(2);
        let x = Array4::from_vec([2, 2, 2, 2], vec![3.5; 16]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn train_mode_moments() {
        let bn = BatchNorm2d::new(3);
        let x = random([4, 3, 5, 5], 11);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_moments(&y, ch);
            assert!(m.abs() < 1e-5);
            // eps shrinks the variance slightly: var/(var+eps)
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn inference_hand_example() {
        let mut bn = BatchNorm2d::new(1);
        bn.running_mean = vec![2.0];
        bn.running_var = vec![4.0];
        bn.gamma = vec![3.0];
        bn.beta = vec![0.5];
        let x = Array4::from_vec([1, 1, 1, 2], vec![4.0, 0.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Inference).unwrap();
        let s = (4.0f64 + 1e-5).sqrt();
        assert_eq!(y.data(), &[2.0 / s * 3.0 + 0.5, -2.0 / s * 3.0 + 0.5]);
    }

    #[test]
    fn running_stats_update() {
        let mut bn = BatchNorm2d::new(1);
        let x = Array4::from_vec([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        assert_eq!(bn.running_mean, vec![0.0]);
        bn.commit(&cache);
        // batch mean 2.5, unbiased var 5/3
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
        let (_, cache) = bn.forward(&x, Mode::Inference).unwrap();
        let before = bn.clone();
        bn.commit(&cache);
        assert_eq!(bn, before);
    }

    #[test]
    fn single_value_per_channel_rejected_in_train() {
        let bn = BatchNorm2d::new(2);
        assert!(bn.forward(&Array4::zeros([1, 2, 1, 1]), Mode::Train).is_err());
        assert!(bn.forward(&Array4::zeros([1, 2, 1, 1]), Mode::Inference).is_ok());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let bn = BatchNorm2d::new(3);
        let x = random([2, 3, 2, 2], 3);
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        let (gx, g) = bn.backward(&cache, &Array4::zeros(x.shape())).unwrap();
        assert!(gx.data().iter().chain(&g.gamma).chain(&g.beta).all(|&v| v == 0.0));
    }

    #[test]
    fn finite_differences_train_and_inference() {
        for mode in [Mode::Train, Mode::Inference] {
            let mut bn = BatchNorm2d::new(3);
            bn.gamma = vec![0.7, -1.3, 2.0];
            bn.beta = vec![0.1, 0.2, -0.3];
            bn.running_mean = vec![0.3, -0.2, 0.1];
            bn.running_var = vec![0.8, 1.5, 0.4];
            let shape = [2, 3, 2, 2];
            let x = random(shape, 5);
            let probe = random(shape, 6);
            let loss = |bn: &BatchNorm2d, x: &Array4| -> f64 {
                let (y, _) = bn.forward(x, mode).unwrap();
                y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = bn.forward(&x, mode).unwrap();
            let (gx, grads) = bn.backward(&cache, &probe).unwrap();
            let nx = finite_difference(x.data(), 1e-4, |v| {
                loss(&bn, &Array4::from_vec(shape, v.to_vec()).unwrap())
            });
            assert!(max_relative_error(gx.data(), &nx) < 1e-5, "{mode:?}");
            let ng = finite_difference(&bn.gamma, 1e-4, |v| {
                let mut b = bn.clone();
                b.gamma.copy_from_slice(v);
                loss(&b, &x)
            });
            assert!(max_relative_error(&grads.gamma, &ng) < 1e-5);
            let nb = finite_difference(&bn.beta, 1e-4, |v| {
                let mut b = bn.clone();
                b.beta.copy_from_slice(v);
                loss(&b, &x)
            });
            assert!(max_relative_error(&grads.beta, &nb) < 1e-5);
        }
    }

    #[test]
    fn input_gradient_sums_to_zero_per_channel() {
        let bn = BatchNorm2d::new(2);
        let x = random([3, 2, 3, 2], 8);
        let probe = random([3, 2, 3, 2], 9);
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        let (gx, _) = bn.backward(&cache, &probe).unwrap();
        for ch in 0..2 {
            let s: f64 = (0..3)
                .map(|b| gx.data()[(b * 2 + ch) * 6..][..6].iter().sum::<f64>())
                .sum();
            assert!(s.abs() < 1e-12, "channel {ch}: {s}");
        }
    }
}
