//! Value-series metrics and reward-curve comparison.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("series needs at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("value {value} at index {index} is not a positive finite number")]
    NonPositive { index: usize, value: f64 },
    #[error("Sharpe ratio is undefined: returns have zero variance")]
    ZeroVariance,
    #[error("curve `{0}` has no points")]
    EmptyCurve(String),
    #[error("comparison needs at least 2 curves, got {0}")]
    TooFewCurves(usize),
    #[error("duplicate curve label `{0}`")]
    DuplicateLabel(String),
}

fn check_values(values: &[f64], needed: usize) -> Result<(), MetricsError> {
    if values.len() < needed {
        return Err(MetricsError::TooShort {
            needed,
            got: values.len(),
        });
    }
    match values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(index) => Err(MetricsError::NonPositive {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// `r_t = v_t / v_{t-1} - 1`.
pub fn daily_returns(values: &[f64]) -> Result<Vec<f64>, MetricsError> {
    check_values(values, 2)?;
    Ok(values.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

/// Mean excess return over its sample standard deviation, scaled by
/// `sqrt(annualization)`. Pass `annualization = 1` for the raw ratio.
pub fn sharpe_ratio(returns: &[f64], risk_free: f64, annualization: f64) -> Result<f64, MetricsError> {
    if returns.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: returns.len(),
        });
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(annualization.sqrt() * (mean - risk_free) / var.sqrt())
}

/// `v_last / v_first - 1`.
pub fn cumulative_return(values: &[f64]) -> Result<f64, MetricsError> {
    check_values(values, 1)?;
    Ok(values[values.len() - 1] / values[0] - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Annualized Sharpe; `None` when undefined (a single return or zero variance).
    pub sharpe: Option<f64>,
    /// Sharpe of the daily returns without annualization.
    pub sharpe_raw: Option<f64>,
    pub cumulative_return: f64,
    pub total_costs: f64,
    pub max_value: f64,
    pub min_value: f64,
    pub n_days: usize,
    pub risk_free: f64,
    pub annualization: f64,
}

impl MetricsReport {
    pub fn from_values(
        values: &[f64],
        total_costs: f64,
        risk_free: f64,
        annualization: f64,
    ) -> Result<Self, MetricsError> {
        let returns = daily_returns(values)?;
        let defined = |r: Result<f64, MetricsError>| match r {
            Ok(v) => Ok(Some(v)),
            Err(MetricsError::ZeroVariance | MetricsError::TooShort { .. }) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            sharpe: defined(sharpe_ratio(&returns, risk_free, annualization))?,
            sharpe_raw: defined(sharpe_ratio(&returns, risk_free, 1.0))?,
            cumulative_return: cumulative_return(values)?,
            total_costs,
            max_value: values.iter().copied().fold(f64::MIN, f64::max),
            min_value: values.iter().copied().fold(f64::MAX, f64::min),
            n_days: values.len(),
            risk_free,
            annualization,
        })
    }
}

/// One point of a training reward curve: the cumulative reward of the
/// episode that finished at `timestep`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub timestep: u64,
    pub episode: u64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCurve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub final_reward: f64,
    pub mean_reward: f64,
    pub peak_reward: f64,
    pub points: usize,
}

/// `a - b` for each summary statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDiff {
    pub a: String,
    pub b: String,
    pub final_diff: f64,
    pub mean_diff: f64,
    pub peak_diff: f64,
}

/// Curves resampled onto the union of their timesteps by carrying each
/// curve's last reward forward. `None` before a curve's first point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedCurves {
    pub labels: Vec<String>,
    pub timesteps: Vec<u64>,
    /// `values[label][timestep]`.
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Sorted by final reward, highest first.
    pub rows: Vec<ComparisonRow>,
    pub pairwise: Vec<PairwiseDiff>,
    pub aligned: AlignedCurves,
}

pub fn compare_runs(curves: &[LabeledCurve]) -> Result<Comparison, MetricsError> {
    if curves.len() < 2 {
        return Err(MetricsError::TooFewCurves(curves.len()));
    }
    let mut seen = BTreeSet::new();
    for c in curves {
        if c.points.is_empty() {
            return Err(MetricsError::EmptyCurve(c.label.clone()));
        }
        if !seen.insert(c.label.as_str()) {
            return Err(MetricsError::DuplicateLabel(c.label.clone()));
        }
    }

    let mut rows: Vec<ComparisonRow> = curves
        .iter()
        .map(|c| {
            let rewards: Vec<f64> = c.points.iter().map(|p| p.reward).collect();
            ComparisonRow {
                label: c.label.clone(),
                final_reward: rewards[rewards.len() - 1],
                mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
                peak_reward: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                points: rewards.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.final_reward
            .total_cmp(&a.final_reward)
            .then_with(|| a.label.cmp(&b.label))
    });

    let mut pairwise = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            pairwise.push(PairwiseDiff {
                a: a.label.clone(),
                b: b.label.clone(),
                final_diff: a.final_reward - b.final_reward,
                mean_diff: a.mean_reward - b.mean_reward,
                peak_diff: a.peak_reward - b.peak_reward,
            });
        }
    }

    let timesteps: Vec<u64> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.timestep))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let values = curves
        .iter()
        .map(|c| {
            let mut sorted = c.points.clone();
            sorted.sort_by_key(|p| p.timestep);
            let mut next = 0;
            let mut last = None;
            timesteps
                .iter()
                .map(|&t| {
                    while next < sorted.len() && sorted[next].timestep <= t {
                        last = Some(sorted[next].reward);
                        next += 1;
                    }
                    last
                })
                .collect()
        })
        .collect();

    Ok(Comparison {
        rows,
        pairwise,
        aligned: AlignedCurves {
            labels: curves.iter().map(|c| c.label.clone()).collect(),
            timesteps,
            values,
        },
    })
}

impl Comparison {
    /// `label,final_reward,mean_reward,peak_reward,points`.
    pub fn write_table_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "label,final_reward,mean_reward,peak_reward,points")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.label, r.final_reward, r.mean_reward, r.peak_reward, r.points
            )?;
        }
        Ok(())
    }

    /// Long format `label,timestep,reward`, skipping timesteps before a curve starts.
    pub fn write_aligned_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "label,timestep,reward")?;
        for (label, values) in self.aligned.labels.iter().zip(&self.aligned.values) {
            for (t, v) in self.aligned.timesteps.iter().zip(values) {
                if let Some(v) = v {
                    writeln!(out, "{label},{t},{v}")?;
                }
            }
        }
        Ok(())
    }
}
