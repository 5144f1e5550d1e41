//! Fixtures and a from-scratch ledger simulator shared by integration tests.
#![allow(dead_code)]

use chrono::{Days, NaiveDate};
use shufflerl::data::{MarketDataset, TickerId, RATIO_COUNT};

/// Day-major close prices (`prices[day][ticker]`) with zero ratios on
/// consecutive calendar days.
pub fn toy_market(prices: &[Vec<f64>]) -> MarketDataset {
    let d = prices[0].len();
    let tickers = (0..d).map(|i| TickerId::new(format!("T{i}")).unwrap()).collect();
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let days = (0..prices.len())
        .map(|k| start.checked_add_days(Days::new(k as u64)).unwrap())
        .collect();
    let closes = prices.iter().flatten().copied().collect();
    let ratios = vec![0.0; prices.len() * d * RATIO_COUNT];
    MarketDataset::new(tickers, days, closes, ratios).unwrap()
}

/// Continuous action that decodes to exactly `delta` shares for `hmax`.
pub fn action_for(delta: i64, hmax: u32) -> f64 {
    let nudge = if delta > 0 {
        0.5
    } else if delta < 0 {
        -0.5
    } else {
        0.0
    };
    (delta as f64 + nudge) / hmax as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub balance: f64,
    pub holdings: Vec<u64>,
    pub cost: f64,
    pub reward: f64,
}

fn marked(balance: f64, holdings: &[u64], prices: &[f64]) -> f64 {
    let mut v = balance;
    for i in 0..holdings.len() {
        v += prices[i] * holdings[i] as f64;
    }
    v
}

/// Replays integer share deltas from `first_day` with sells before buys and
/// the largest affordable partial buy.
pub fn simulate_ledger(
    prices: &[Vec<f64>],
    first_day: usize,
    initial_balance: f64,
    cost_rate: f64,
    reward_scale: f64,
    deltas: &[Vec<i64>],
) -> Vec<LedgerRow> {
    let d = prices[0].len();
    let mut balance = initial_balance;
    let mut holdings = vec![0u64; d];
    let mut rows = Vec::new();
    for (t, step) in deltas.iter().enumerate() {
        let today = &prices[first_day + t];
        let before = marked(balance, &holdings, today);
        let mut cost = 0.0;
        for i in 0..d {
            if step[i] < 0 {
                let q = (-step[i]) as u64;
                let q = if q > holdings[i] { holdings[i] } else { q };
                if q > 0 {
                    let value = q as f64 * today[i];
                    let fee = value * cost_rate;
                    balance += value - fee;
                    holdings[i] -= q;
                    cost += fee;
                }
            }
        }
        for i in 0..d {
            if step[i] > 0 {
                let mut q = step[i] as u64;
                while q > 0 {
                    let value = q as f64 * today[i];
                    if value + value * cost_rate <= balance {
                        break;
                    }
                    q -= 1;
                }
                if q > 0 {
                    let value = q as f64 * today[i];
                    let fee = value * cost_rate;
                    balance -= value + fee;
                    holdings[i] += q;
                    cost += fee;
                }
            }
        }
        let after = marked(balance, &holdings, &prices[first_day + t + 1]);
        rows.push(LedgerRow {
            balance,
            holdings: holdings.clone(),
            cost,
            reward: (after - before) * reward_scale,
        });
    }
    rows
}

/// Every sequence of `steps` per-ticker deltas in `-hmax..=hmax`.
pub fn all_delta_sequences(tickers: usize, hmax: i64, steps: usize) -> Vec<Vec<Vec<i64>>> {
    let per_step: Vec<Vec<i64>> = (0..tickers).fold(vec![vec![]], |acc, _| {
        acc.into_iter()
            .flat_map(|prefix| {
                (-hmax..=hmax).map(move |k| {
                    let mut v = prefix.clone();
                    v.push(k);
                    v
                })
            })
            .collect()
    });
    (0..steps).fold(vec![vec![]], |acc, _| {
        acc.into_iter()
            .flat_map(|prefix| {
                per_step.iter().map(move |s| {
                    let mut v = prefix.clone();
                    v.push(s.clone());
                    v
                })
            })
            .collect()
    })
}

/// Distance in units in the last place between two finite doubles.
pub fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}
