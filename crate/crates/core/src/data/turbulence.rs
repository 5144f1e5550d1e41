use nalgebra::{DMatrix, DVector};

use super::{DataError, MarketDataset};

/// Trading days of return history behind each turbulence value.
pub const DEFAULT_TURBULENCE_LOOKBACK: usize = 252;

const RIDGE: f64 = 1e-6;

/// Per-day turbulence index; `None` until the lookback window has filled.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbulenceSeries {
    pub lookback: usize,
    pub values: Vec<Option<f64>>,
}

impl TurbulenceSeries {
    /// A series with no defined values, for datasets too short to measure.
    pub fn absent(days: usize, lookback: usize) -> Self {
        Self {
            lookback,
            values: vec![None; days],
        }
    }

    pub fn get(&self, day: usize) -> Option<f64> {
        self.values.get(day).copied().flatten()
    }
}

/// Squared Mahalanobis distance `dev' * cov^-1 * dev` for a row-major
/// covariance. Returns `None` when `cov` is not positive definite.
pub fn mahalanobis_squared(deviation: &[f64], covariance: &[f64]) -> Option<f64> {
    let n = deviation.len();
    assert_eq!(covariance.len(), n * n, "covariance must be n x n");
    let cov = DMatrix::from_row_slice(n, n, covariance);
    let chol = cov.cholesky()?;
    let y = chol
        .l()
        .solve_lower_triangular(&DVector::from_column_slice(deviation))?;
    Some(y.norm_squared())
}

/// Squared Mahalanobis distance of each day's return vector from the mean of
/// the previous `lookback` return vectors, under their sample covariance plus
/// `1e-6 * I`.
///
/// The return of day `t` is `close[t] / close[t-1] - 1`, so the first defined
/// value is at day `lookback + 1`.
pub fn compute_turbulence(dataset: &MarketDataset, lookback: usize) -> Result<TurbulenceSeries, DataError> {
    let d = dataset.ticker_count();
    if lookback < d + 2 {
        return Err(DataError::InsufficientHistory(format!(
            "lookback {lookback} must be at least ticker count + 2 = {}",
            d + 2
        )));
    }
    let n = dataset.len();
    if n < lookback + 2 {
        return Err(DataError::InsufficientHistory(format!(
            "{n} days cannot fill a {lookback}-day return lookback"
        )));
    }

    // returns[t] is the return vector of day t + 1
    let returns: Vec<Vec<f64>> = (1..n)
        .map(|t| {
            dataset
                .closes(t)
                .iter()
                .zip(dataset.closes(t - 1))
                .map(|(p, q)| p / q - 1.0)
                .collect()
        })
        .collect();

    let mut values = vec![None; n];
    let mut mean = vec![0.0; d];
    let mut cov = vec![0.0; d * d];
    let mut dev = vec![0.0; d];
    for (t, value) in values.iter_mut().enumerate().skip(lookback + 1) {
        let history = &returns[t - 1 - lookback..t - 1];
        mean.fill(0.0);
        for r in history {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= lookback as f64;
        }
        cov.fill(0.0);
        for r in history {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in 0..=i {
                    cov[i * d + j] += di * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let c = cov[i * d + j] / (lookback - 1) as f64;
                cov[i * d + j] = c;
                cov[j * d + i] = c;
            }
            cov[i * d + i] += RIDGE;
        }
        for ((x, r), m) in dev.iter_mut().zip(&returns[t - 1]).zip(&mean) {
            *x = r - m;
        }
        *value = mahalanobis_squared(&dev, &cov);
    }
    Ok(TurbulenceSeries { lookback, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_market, SynthConfig, TickerId, RATIO_COUNT};

    #[test]
    fn identity_covariance_hand_value() {
        let v = mahalanobis_squared(&[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(v, 5.0);
    }

    #[test]
    fn diagonal_covariance_hand_value() {
        // 1^2/4 + 2^2/1
        let v = mahalanobis_squared(&[1.0, 2.0], &[4.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((v - 4.25).abs() < 1e-15);
    }

    #[test]
    fn return_equal_to_mean_is_zero() {
        // Alternating returns +1% / -1%: the mean over an even lookback is a
        // fixed vector; pick a day whose return matches it exactly by making
        // the last return the mean itself.
        let lookback = 6;
        let mut closes = vec![100.0];
        let pattern = [0.01, -0.01, 0.02, -0.02, 0.03, -0.03];
        for r in pattern {
            let p = *closes.last().unwrap();
            closes.push(p * (1.0 + r));
        }
        let mean: f64 = pattern.iter().sum::<f64>() / pattern.len() as f64;
        let p = *closes.last().unwrap();
        closes.push(p * (1.0 + mean));
        let n = closes.len();
        let start = chrono::NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let days = (0..n).map(|i| start + chrono::Days::new(i as u64)).collect();
        let ds = MarketDataset::new(
            vec![TickerId::new("A").unwrap()],
            days,
            closes,
            vec![0.0; n * RATIO_COUNT],
        )
        .unwrap();
        let series = compute_turbulence(&ds, lookback).unwrap();
        assert!(series.values[..lookback + 1].iter().all(Option::is_none));
        // Reconstructed return differs from the mean only by rounding.
        assert!(series.get(n - 1).unwrap() < 1e-20);
    }

    #[test]
    fn constant_prices_give_zero() {
        let ds = generate_synthetic_market(&SynthConfig {
            seed: 1,
            tickers: 3,
            days: 40,
            drift: 0.0,
            volatility: 0.0,
        })
        .unwrap();
        let series = compute_turbulence(&ds, 10).unwrap();
        let defined: Vec<f64> = series.values.iter().flatten().copied().collect();
        assert_eq!(defined.len(), 40 - 11);
        assert!(defined.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lookback_too_small_for_tickers() {
        let ds = generate_synthetic_market(&SynthConfig {
            seed: 1,
            tickers: 5,
            days: 40,
            drift: 0.0,
            volatility: 0.01,
        })
        .unwrap();
        assert!(compute_turbulence(&ds, 6).is_err());
        assert!(compute_turbulence(&ds, 39).is_err());
        assert!(compute_turbulence(&ds, 38).is_ok());
    }
}
