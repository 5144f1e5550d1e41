//! The portfolio MDP.
//!
//! Each step decodes a continuous action in `[-1, 1]^D` into integer share
//! deltas, fills sells and then buys at the current day's close with a fixed
//! proportional cost, advances one day and slides the observation window.
//! The reward is the scaled change in portfolio value.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{compute_turbulence, MarketDataset, TurbulenceSeries, DEFAULT_TURBULENCE_LOOKBACK};
use crate::features::{
    apply_permutation, build_feature_vector, init_window, FeatureError, FeatureLayout, FeatureVector, LayoutTag,
    PermutationSpec, WindowMatrix, DEFAULT_WINDOW_LENGTH,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("dataset has {available} days but start {start} with window {window} needs at least {needed}")]
    InsufficientDays {
        available: usize,
        needed: usize,
        start: usize,
        window: usize,
    },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("environment has not been reset")]
    NotReset,
    #[error("run_episode needs a freshly reset environment")]
    NotFresh,
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Feature ordering of the observation rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LayoutMode {
    #[default]
    Canonical,
    Shuffled {
        permutation: PermutationSpec,
    },
}

impl LayoutMode {
    pub fn tag(&self) -> LayoutTag {
        match self {
            LayoutMode::Canonical => LayoutTag::Canonical,
            LayoutMode::Shuffled { .. } => LayoutTag::Shuffled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub initial_balance: f64,
    /// Maximum shares traded per ticker per step.
    pub hmax: u32,
    /// Fraction of trade value charged on each buy and each sell.
    pub cost_rate: f64,
    pub reward_scale: f64,
    pub balance_scale: f64,
    pub window_length: usize,
    pub turbulence_lookback: usize,
    pub layout: LayoutMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            initial_balance: 1_000_000.0,
            hmax: 100,
            cost_rate: 0.001,
            reward_scale: 1e-6,
            balance_scale: 1e-6,
            window_length: DEFAULT_WINDOW_LENGTH,
            turbulence_lookback: DEFAULT_TURBULENCE_LOOKBACK,
            layout: LayoutMode::Canonical,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if !(self.initial_balance.is_finite() && self.initial_balance > 0.0) {
            return bad(format!(
                "initial_balance must be positive, got {}",
                self.initial_balance
            ));
        }
        if self.hmax == 0 {
            return bad("hmax must be at least 1".into());
        }
        if !(self.cost_rate >= 0.0 && self.cost_rate < 1.0) {
            return bad(format!("cost_rate must be in [0, 1), got {}", self.cost_rate));
        }
        for (name, v) in [
            ("reward_scale", self.reward_scale),
            ("balance_scale", self.balance_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.window_length == 0 {
            return bad("window_length must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub balance: f64,
    pub holdings: Vec<u64>,
    pub day_index: usize,
    pub trade_cost_accum: f64,
}

/// `balance + sum_i prices[i] * holdings[i]`, accumulated in ticker order.
pub fn portfolio_value(state: &PortfolioState, prices: &[f64]) -> Result<f64, EnvError> {
    if prices.len() != state.holdings.len() {
        return Err(EnvError::Dimension {
            what: "prices",
            expected: state.holdings.len(),
            got: prices.len(),
        });
    }
    Ok(prices
        .iter()
        .zip(&state.holdings)
        .fold(state.balance, |v, (p, &h)| v + p * h as f64))
}

/// Clips each component to `[-1, 1]` and truncates `a * hmax` toward zero.
/// NaN components decode to no trade.
pub fn decode_action(action: &[f64], hmax: u32) -> Vec<i64> {
    action
        .iter()
        .map(|&a| {
            if a.is_nan() {
                0
            } else {
                (a.clamp(-1.0, 1.0) * hmax as f64).trunc() as i64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeOutcome {
    pub state: PortfolioState,
    pub costs: f64,
    pub executed: Vec<i64>,
}

/// Fills sells (capped at holdings) and then buys (capped by cash), each
/// phase in ticker order.
pub fn execute_trades(
    state: &PortfolioState,
    deltas: &[i64],
    prices: &[f64],
    cost_rate: f64,
) -> Result<TradeOutcome, EnvError> {
    let d = state.holdings.len();
    for (what, got) in [("deltas", deltas.len()), ("prices", prices.len())] {
        if got != d {
            return Err(EnvError::Dimension { what, expected: d, got });
        }
    }
    let mut next = state.clone();
    let mut executed = vec![0i64; d];
    let mut costs = 0.0;

    for i in 0..d {
        if deltas[i] < 0 {
            let qty = deltas[i].unsigned_abs().min(next.holdings[i]);
            if qty == 0 {
                continue;
            }
            let value = qty as f64 * prices[i];
            let cost = value * cost_rate;
            next.balance += value - cost;
            next.holdings[i] -= qty;
            costs += cost;
            executed[i] = -(qty as i64);
        }
    }
    for i in 0..d {
        if deltas[i] > 0 {
            let unit = prices[i] * (1.0 + cost_rate);
            let mut qty = (deltas[i] as u64).min((next.balance / unit).floor() as u64);
            // Step down until the exact ledger charge fits.
            while qty > 0 {
                let value = qty as f64 * prices[i];
                if value + value * cost_rate <= next.balance {
                    break;
                }
                qty -= 1;
            }
            if qty == 0 {
                continue;
            }
            let value = qty as f64 * prices[i];
            let cost = value * cost_rate;
            next.balance -= value + cost;
            next.holdings[i] += qty;
            costs += cost;
            executed[i] = qty as i64;
        }
    }
    next.trade_cost_accum += costs;
    Ok(TradeOutcome {
        state: next,
        costs,
        executed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub day_index: usize,
    pub value_before: f64,
    pub portfolio_value: f64,
    pub balance: f64,
    pub holdings: Vec<u64>,
    pub turbulence: Option<f64>,
    pub costs: f64,
    pub executed: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: WindowMatrix,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// A single-threaded episode cursor over a shared dataset.
#[derive(Debug, Clone)]
pub struct TradingEnv {
    dataset: Arc<MarketDataset>,
    config: EnvConfig,
    layout: FeatureLayout,
    turbulence: TurbulenceSeries,
    state: PortfolioState,
    window: Option<WindowMatrix>,
    start: usize,
    done: bool,
}

impl TradingEnv {
    pub fn new(dataset: Arc<MarketDataset>, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let layout = FeatureLayout::new(dataset.ticker_count());
        if let LayoutMode::Shuffled { permutation } = &config.layout {
            if permutation.len() != layout.total() {
                return Err(EnvError::Dimension {
                    what: "permutation",
                    expected: layout.total(),
                    got: permutation.len(),
                });
            }
        }
        // Monitored only; never gates trading. Too-short datasets have none.
        let turbulence = compute_turbulence(&dataset, config.turbulence_lookback)
            .unwrap_or_else(|_| TurbulenceSeries::absent(dataset.len(), config.turbulence_lookback));
        let state = PortfolioState {
            balance: config.initial_balance,
            holdings: vec![0; dataset.ticker_count()],
            day_index: 0,
            trade_cost_accum: 0.0,
        };
        Ok(Self {
            dataset,
            config,
            layout,
            turbulence,
            state,
            window: None,
            start: 0,
            done: false,
        })
    }

    /// Starts an episode whose first observation covers days
    /// `start..start + window_length`.
    pub fn reset(&mut self, start: usize) -> Result<WindowMatrix, EnvError> {
        let window = self.config.window_length;
        let needed = start + window + 1;
        if needed > self.dataset.len() {
            return Err(EnvError::InsufficientDays {
                available: self.dataset.len(),
                needed,
                start,
                window,
            });
        }
        self.state = PortfolioState {
            balance: self.config.initial_balance,
            holdings: vec![0; self.dataset.ticker_count()],
            day_index: start + window - 1,
            trade_cost_accum: 0.0,
        };
        let rows = (start..start + window)
            .map(|day| self.features(day))
            .collect::<Result<Vec<_>, _>>()?;
        let w = init_window(&rows, window)?;
        self.window = Some(w.clone());
        self.start = start;
        self.done = false;
        Ok(w)
    }

    fn features(&self, day: usize) -> Result<FeatureVector, EnvError> {
        let v = build_feature_vector(
            self.state.balance,
            self.dataset.closes(day),
            &self.state.holdings,
            self.dataset.day_ratios(day),
            self.config.balance_scale,
        )?;
        Ok(match &self.config.layout {
            LayoutMode::Canonical => v,
            LayoutMode::Shuffled { permutation } => apply_permutation(&v, permutation)?,
        })
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.window.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let d = self.dataset.ticker_count();
        if action.len() != d {
            return Err(EnvError::Dimension {
                what: "action",
                expected: d,
                got: action.len(),
            });
        }
        let day = self.state.day_index;
        let prices = self.dataset.closes(day);
        let value_before = portfolio_value(&self.state, prices)?;
        let deltas = decode_action(action, self.config.hmax);
        let outcome = execute_trades(&self.state, &deltas, prices, self.config.cost_rate)?;
        self.state = outcome.state;
        self.state.day_index = day + 1;
        let value_after = portfolio_value(&self.state, self.dataset.closes(day + 1))?;
        let reward = (value_after - value_before) * self.config.reward_scale;

        let row = self.features(day + 1)?;
        let window = self.window.as_mut().expect("checked above");
        window.slide(&row)?;
        self.done = day + 1 == self.dataset.len() - 1;
        Ok(StepResult {
            observation: window.clone(),
            reward,
            done: self.done,
            info: StepInfo {
                day_index: day + 1,
                value_before,
                portfolio_value: value_after,
                balance: self.state.balance,
                holdings: self.state.holdings.clone(),
                turbulence: self.turbulence.get(day + 1),
                costs: outcome.costs,
                executed: outcome.executed,
            },
        })
    }

    pub fn observation(&self) -> Option<&WindowMatrix> {
        self.window.as_ref()
    }

    pub fn state(&self) -> &PortfolioState {
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Arc<MarketDataset> {
        &self.dataset
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn turbulence(&self) -> &TurbulenceSeries {
        &self.turbulence
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn action_dim(&self) -> usize {
        self.dataset.ticker_count()
    }

    /// Shape of the observation: `(window_length, feature count)`.
    pub fn observation_shape(&self) -> (usize, usize) {
        (self.config.window_length, self.layout.total())
    }

    /// Number of steps in an episode started at `start`.
    pub fn episode_length(&self, start: usize) -> usize {
        self.dataset.len().saturating_sub(start + self.config.window_length)
    }

    /// Current portfolio value at the cursor day's closes.
    pub fn current_value(&self) -> f64 {
        portfolio_value(&self.state, self.dataset.closes(self.state.day_index)).expect("state matches dataset")
    }

    fn is_fresh(&self) -> bool {
        self.window.is_some() && !self.done && self.state.day_index == self.start + self.config.window_length - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub action: Vec<f64>,
    pub reward: f64,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub transitions: Vec<Transition>,
    /// `sum_d gamma^(d-1) * r_d` over the episode's rewards.
    pub discounted_return: f64,
    /// Portfolio value at reset followed by the value after each step.
    pub values: Vec<f64>,
    /// Day index of each entry of `values`.
    pub days: Vec<usize>,
    pub initial_balance: f64,
}

impl EpisodeOutcome {
    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn total_costs(&self) -> f64 {
        self.transitions.iter().map(|t| t.info.costs).sum()
    }

    /// CSV trace: `day,balance,portfolio_value,reward,costs,turbulence,<holdings per ticker>`.
    pub fn write_trace_csv<W: Write>(&self, dataset: &MarketDataset, mut out: W) -> std::io::Result<()> {
        let tickers: Vec<String> = dataset.tickers().iter().map(|t| format!("holdings_{t}")).collect();
        writeln!(
            out,
            "day,balance,portfolio_value,reward,costs,turbulence,{}",
            tickers.join(",")
        )?;
        let zeros = vec!["0".to_string(); dataset.ticker_count()];
        writeln!(
            out,
            "{},{},{},0,0,,{}",
            dataset.days()[self.days[0]],
            self.initial_balance,
            self.values[0],
            zeros.join(",")
        )?;
        for t in &self.transitions {
            let holdings: Vec<String> = t.info.holdings.iter().map(u64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                dataset.days()[t.info.day_index],
                t.info.balance,
                t.info.portfolio_value,
                t.reward,
                t.info.costs,
                t.info.turbulence.map(|v| v.to_string()).unwrap_or_default(),
                holdings.join(",")
            )?;
        }
        Ok(())
    }
}

/// Discounted return with the first reward undiscounted.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for r in rewards {
        total += weight * r;
        weight *= gamma;
    }
    total
}

/// Rolls `policy` from a freshly reset environment until the episode ends.
pub fn run_episode<P>(env: &mut TradingEnv, mut policy: P, gamma: f64) -> Result<EpisodeOutcome, EnvError>
where
    P: FnMut(&WindowMatrix) -> Vec<f64>,
{
    try_run_episode(env, |w| Ok::<_, EnvError>(policy(w)), gamma)
}

/// [`run_episode`] with a policy that can fail.
pub fn try_run_episode<P, E>(env: &mut TradingEnv, mut policy: P, gamma: f64) -> Result<EpisodeOutcome, E>
where
    P: FnMut(&WindowMatrix) -> Result<Vec<f64>, E>,
    E: From<EnvError>,
{
    if !env.is_fresh() {
        return Err(EnvError::NotFresh.into());
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(EnvError::InvalidConfig(format!("gamma must be in [0, 1], got {gamma}")).into());
    }
    let mut values = vec![env.current_value()];
    let mut days = vec![env.state().day_index];
    let mut transitions = Vec::new();
    let mut observation = env.observation().expect("fresh env has a window").clone();
    loop {
        let action = policy(&observation)?;
        let result = env.step(&action)?;
        values.push(result.info.portfolio_value);
        days.push(result.info.day_index);
        transitions.push(Transition {
            action,
            reward: result.reward,
            info: result.info,
        });
        observation = result.observation;
        if result.done {
            break;
        }
    }
    let rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
    Ok(EpisodeOutcome {
        discounted_return: discounted_return(&rewards, gamma),
        transitions,
        values,
        days,
        initial_balance: env.config().initial_balance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_market, MarketDataset, SynthConfig, TickerId, RATIO_COUNT};

    fn market(closes: &[&[f64]]) -> Arc<MarketDataset> {
        let d = closes[0].len();
        let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let days = (0..closes.len()).map(|i| start + chrono::Days::new(i as u64)).collect();
        Arc::new(
            MarketDataset::new(
                (0..d).map(|i| TickerId::new(format!("T{i}")).unwrap()).collect(),
                days,
                closes.iter().flat_map(|c| c.iter().copied()).collect(),
                vec![0.0; closes.len() * d * RATIO_COUNT],
            )
            .unwrap(),
        )
    }

    fn state(balance: f64, holdings: &[u64]) -> PortfolioState {
        PortfolioState {
            balance,
            holdings: holdings.to_vec(),
            day_index: 0,
            trade_cost_accum: 0.0,
        }
    }

    fn config(window: usize) -> EnvConfig {
        EnvConfig {
            window_length: window,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn value_examples() {
        assert_eq!(portfolio_value(&state(42.0, &[0, 0]), &[3.0, 4.0]).unwrap(), 42.0);
        assert_eq!(portfolio_value(&state(100.0, &[1, 2]), &[10.0, 20.0]).unwrap(), 150.0);
        let s = state(0.0, &[3, 7]);
        let v = portfolio_value(&s, &[1.5, 2.25]).unwrap();
        assert_eq!(portfolio_value(&s, &[3.0, 4.5]).unwrap(), 2.0 * v);
        assert!(portfolio_value(&s, &[1.0]).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_action(&[0.5], 100), vec![50]);
        assert_eq!(decode_action(&[0.0], 100), vec![0]);
        // floor(|-0.999 * 100|) with the sign restored
        let oracle = -((0.999f64 * 100.0).abs().floor() as i64);
        assert_eq!(oracle, -99);
        assert_eq!(decode_action(&[-0.999], 100), vec![oracle]);
        assert_eq!(decode_action(&[3.0, -7.0, f64::NAN], 100), vec![100, -100, 0]);
    }

    #[test]
    fn sell_capped_at_holdings() {
        let out = execute_trades(&state(0.0, &[3]), &[-10], &[10.0], 0.0).unwrap();
        assert_eq!(out.executed, vec![-3]);
        assert_eq!(out.state.holdings, vec![0]);
        assert_eq!(out.state.balance, 30.0);
    }

    #[test]
    fn buy_with_costs_ledger() {
        let out = execute_trades(&state(1000.0, &[0]), &[50], &[10.0], 0.001).unwrap();
        // 50 * 10 = 500 plus 0.1% = 500.5
        assert!((out.state.balance - 499.5).abs() < 1e-9);
        assert_eq!(out.state.holdings, vec![50]);
        assert!((out.costs - 0.5).abs() < 1e-12);
        assert!((out.state.trade_cost_accum - 0.5).abs() < 1e-12);
    }

    #[test]
    fn buy_capped_by_cash() {
        let out = execute_trades(&state(100.0, &[0]), &[50], &[10.0], 0.0).unwrap();
        assert_eq!(out.executed, vec![10]);
        assert_eq!(out.state.balance, 0.0);
    }

    #[test]
    fn sells_fund_buys() {
        let out = execute_trades(&state(0.0, &[0, 5]), &[4, -5], &[10.0, 10.0], 0.0).unwrap();
        assert_eq!(out.executed, vec![4, -5]);
        assert_eq!(out.state.holdings, vec![4, 0]);
        assert_eq!(out.state.balance, 10.0);
    }

    #[test]
    fn partial_fill_then_later_buys_use_remainder() {
        let out = execute_trades(&state(25.0, &[0, 0]), &[5, 5], &[10.0, 2.0], 0.0).unwrap();
        assert_eq!(out.executed, vec![2, 2]);
        assert_eq!(out.state.balance, 1.0);
    }

    #[test]
    fn reset_covers_first_window() {
        let closes: Vec<Vec<f64>> = (0..100).map(|t| vec![1.0 + t as f64]).collect();
        let refs: Vec<&[f64]> = closes.iter().map(Vec::as_slice).collect();
        let mut env = TradingEnv::new(market(&refs), config(90)).unwrap();
        let obs = env.reset(0).unwrap();
        assert_eq!(obs.rows(), 90);
        assert_eq!(obs.row(0)[1], 1.0);
        assert_eq!(obs.newest()[1], 90.0);
        assert_eq!(env.state().day_index, 89);
        assert_eq!(env.current_value(), 1_000_000.0);
        assert_eq!(env.episode_length(0), 10);
    }

    #[test]
    fn reset_needs_enough_days() {
        let closes: Vec<Vec<f64>> = (0..50).map(|_| vec![1.0]).collect();
        let refs: Vec<&[f64]> = closes.iter().map(Vec::as_slice).collect();
        let mut env = TradingEnv::new(market(&refs), config(90)).unwrap();
        assert!(matches!(env.reset(0), Err(EnvError::InsufficientDays { .. })));
    }

    #[test]
    fn zero_action_flat_prices_zero_reward() {
        let mut env = TradingEnv::new(market(&[&[10.0], &[10.0], &[10.0]]), config(1)).unwrap();
        env.reset(0).unwrap();
        let r = env.step(&[0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
        let r = env.step(&[0.0]).unwrap();
        assert!(r.done);
        assert_eq!(env.step(&[0.0]), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn price_move_reward() {
        let cfg = EnvConfig {
            initial_balance: 1000.0,
            cost_rate: 0.0,
            window_length: 1,
            ..EnvConfig::default()
        };
        let mut env = TradingEnv::new(market(&[&[10.0], &[10.0], &[11.0]]), cfg).unwrap();
        env.reset(0).unwrap();
        // Buy 100 shares with all the cash, then hold through 10 -> 11.
        let r = env.step(&[1.0]).unwrap();
        assert_eq!(r.info.executed, vec![100]);
        assert_eq!(r.reward, 0.0);
        let r = env.step(&[0.0]).unwrap();
        // (1100 - 1000) * 1e-6
        assert!((r.reward - 1e-4).abs() < 1e-18);
        assert_eq!(r.info.portfolio_value, 1100.0);
    }

    #[test]
    fn zero_action_episode_keeps_capital() {
        let ds = Arc::new(
            generate_synthetic_market(&SynthConfig {
                seed: 2,
                tickers: 3,
                days: 40,
                drift: 0.001,
                volatility: 0.02,
            })
            .unwrap(),
        );
        let mut env = TradingEnv::new(ds, config(5)).unwrap();
        env.reset(0).unwrap();
        let out = run_episode(&mut env, |_| vec![0.0; 3], 0.99).unwrap();
        assert_eq!(out.transitions.len(), 35);
        assert_eq!(*out.values.last().unwrap(), 1_000_000.0);
        assert_eq!(env.state().trade_cost_accum, 0.0);
        assert_eq!(out.total_costs(), 0.0);
    }

    #[test]
    fn discount_conventions() {
        assert_eq!(discounted_return(&[3.0, 5.0, 7.0], 0.0), 3.0);
        assert_eq!(discounted_return(&[3.0, 5.0, 7.0], 1.0), 15.0);
        assert_eq!(discounted_return(&[1.0, 2.0], 0.5), 2.0);
    }

    #[test]
    fn run_episode_requires_fresh_env() {
        let mut env = TradingEnv::new(market(&[&[10.0], &[10.0], &[10.0]]), config(1)).unwrap();
        assert_eq!(
            run_episode(&mut env, |_| vec![0.0], 1.0).unwrap_err(),
            EnvError::NotFresh
        );
        env.reset(0).unwrap();
        env.step(&[0.0]).unwrap();
        assert_eq!(
            run_episode(&mut env, |_| vec![0.0], 1.0).unwrap_err(),
            EnvError::NotFresh
        );
    }

    #[test]
    fn shuffled_observation_matches_permuted_canonical() {
        let ds = Arc::new(
            generate_synthetic_market(&SynthConfig {
                seed: 5,
                tickers: 3,
                days: 20,
                drift: 0.0,
                volatility: 0.02,
            })
            .unwrap(),
        );
        let perm = PermutationSpec::ticker_block(FeatureLayout::new(3));
        let mut plain = TradingEnv::new(ds.clone(), config(4)).unwrap();
        let shuffled_cfg = EnvConfig {
            layout: LayoutMode::Shuffled {
                permutation: perm.clone(),
            },
            ..config(4)
        };
        let mut shuffled = TradingEnv::new(ds, shuffled_cfg).unwrap();
        plain.reset(0).unwrap();
        shuffled.reset(0).unwrap();
        for k in 0..5 {
            let a = [0.3, -0.2, 0.9 - 0.1 * k as f64];
            let p = plain.step(&a).unwrap();
            let s = shuffled.step(&a).unwrap();
            assert_eq!(p.reward, s.reward);
            assert_eq!(s.observation.tag(), LayoutTag::Shuffled);
            for r in 0..4 {
                let mut gathered = vec![0.0; perm.len()];
                perm.gather_into(p.observation.row(r), &mut gathered).unwrap();
                assert_eq!(gathered.as_slice(), s.observation.row(r));
            }
        }
    }

    #[test]
    fn shuffled_permutation_length_checked() {
        let cfg = EnvConfig {
            layout: LayoutMode::Shuffled {
                permutation: PermutationSpec::identity(5),
            },
            ..config(1)
        };
        assert!(TradingEnv::new(market(&[&[1.0], &[1.0]]), cfg).is_err());
    }

    #[test]
    fn trace_csv_has_row_per_day() {
        let mut env = TradingEnv::new(market(&[&[10.0], &[10.0], &[11.0]]), config(1)).unwrap();
        env.reset(0).unwrap();
        let out = run_episode(&mut env, |_| vec![0.5], 1.0).unwrap();
        let mut buf = Vec::new();
        out.write_trace_csv(env.dataset(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "day,balance,portfolio_value,reward,costs,turbulence,holdings_T0"
        );
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("2020-01-02,"));
    }

    #[test]
    fn config_validation() {
        assert!(EnvConfig::default().validate().is_ok());
        let bad = EnvConfig {
            cost_rate: 1.0,
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EnvConfig {
            hmax: 0,
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
