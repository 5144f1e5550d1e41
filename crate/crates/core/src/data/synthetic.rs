use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, MarketDataset, TickerId, RATIO_COUNT};

/// Trading days between ratio redraws (about one quarter).
pub const RATIO_REDRAW_PERIOD: usize = 63;

const INITIAL_PRICE: f64 = 100.0;

/// Plausible (low, high) ranges for each ratio, in feature order.
const RATIO_RANGES: [(f64, f64); RATIO_COUNT] = [
    (0.8, 2.5),
    (0.1, 1.2),
    (0.5, 2.0),
    (0.2, 0.8),
    (0.2, 3.0),
    (2.0, 12.0),
    (3.0, 15.0),
    (3.0, 12.0),
    (-0.05, 0.35),
    (-0.10, 0.30),
    (-0.02, 0.15),
    (-0.05, 0.40),
    (-1.0, 12.0),
    (5.0, 80.0),
    (0.0, 4.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub tickers: usize,
    pub days: usize,
    #[serde(default)]
    pub drift: f64,
    #[serde(default = "default_volatility")]
    pub volatility: f64,
}

fn default_volatility() -> f64 {
    0.01
}

/// Geometric random walk prices from 100 with piecewise-constant ratios.
///
/// `p[t] = p[t-1] * (1 + drift) * exp(volatility * z - volatility^2 / 2)` with
/// standard normal `z`, so zero volatility gives exactly compounding drift.
/// Dates are consecutive weekdays from 2015-01-02; tickers are `SYN00`, `SYN01`, ...
pub fn generate_synthetic_market(config: &SynthConfig) -> Result<MarketDataset, DataError> {
    if config.tickers == 0 || config.days == 0 {
        return Err(DataError::Invalid(
            "synthetic market needs at least one ticker and one day".into(),
        ));
    }
    if !(config.volatility.is_finite() && config.volatility >= 0.0) {
        return Err(DataError::Invalid(format!(
            "volatility must be a non-negative number, got {}",
            config.volatility
        )));
    }
    if !(config.drift.is_finite() && config.drift > -1.0) {
        return Err(DataError::Invalid(format!(
            "drift must be greater than -1, got {}",
            config.drift
        )));
    }

    let d = config.tickers;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tickers = (0..d)
        .map(|i| TickerId::new(format!("SYN{i:02}")))
        .collect::<Result<Vec<_>, _>>()?;

    let mut days = Vec::with_capacity(config.days);
    let mut date = NaiveDate::from_ymd_opt(2015, 1, 2).expect("valid date");
    while days.len() < config.days {
        if !matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(date);
        }
        date = date.succ_opt().expect("date in range");
    }

    let growth = 1.0 + config.drift;
    let vol = config.volatility;
    let mut closes = Vec::with_capacity(config.days * d);
    let mut ratios = Vec::with_capacity(config.days * d * RATIO_COUNT);
    let mut current = vec![[0.0; RATIO_COUNT]; d];
    let mut price = vec![INITIAL_PRICE; d];
    for t in 0..config.days {
        if t % RATIO_REDRAW_PERIOD == 0 {
            for block in current.iter_mut() {
                for (r, (lo, hi)) in block.iter_mut().zip(RATIO_RANGES) {
                    *r = rng.random_range(lo..hi);
                }
            }
        }
        for p in price.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            if t > 0 {
                *p *= growth * (vol * z - 0.5 * vol * vol).exp();
            }
        }
        closes.extend_from_slice(&price);
        for block in &current {
            ratios.extend_from_slice(block);
        }
    }
    MarketDataset::new(tickers, days, closes, ratios)
}
