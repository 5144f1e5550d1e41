use std::sync::Arc;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{normalize_advantages, ppo_loss_from_output, sample_action, LossBatch, LossCoefficients};
use super::{Adam, AgentSpec, PpoConfig, PpoError, RolloutBuffer};
use crate::data::MarketDataset;
use crate::env::{try_run_episode, EnvConfig, EpisodeOutcome, TradingEnv};
use crate::features::WindowMatrix;
use crate::metrics::{CurvePoint, MetricsReport, TRADING_DAYS_PER_YEAR};
use crate::nn::{init_params, ActorCritic, Mode};

/// Averages over the minibatches of one update.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: u64,
    pub timestep: u64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// `epochs_per_update` passes of shuffled minibatches over a finished buffer.
pub fn update<R: Rng + ?Sized>(
    net: &mut ActorCritic,
    optimizer: &mut Adam,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    let n = buffer.len();
    if n == 0 {
        return Err(PpoError::InvalidConfig("update called with an empty buffer".into()));
    }
    if buffer.advantages.len() != n {
        return Err(PpoError::Length {
            what: "advantages",
            expected: n,
            got: buffer.advantages.len(),
        });
    }
    optimizer.learning_rate = config.learning_rate;
    let coef = LossCoefficients {
        clip_epsilon: config.clip_epsilon,
        value_coef: config.value_coef,
        entropy_coef: config.entropy_coef,
    };
    let d = buffer.action_dim;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..config.epochs_per_update {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            // a lone trailing sample cannot feed train-mode batch norm
            if chunk.len() == 1 && n > 1 {
                continue;
            }
            let input = net.batch_input(chunk.iter().map(|&i| buffer.observations.get(i)))?;
            let mut actions = Vec::with_capacity(chunk.len() * d);
            let mut old_log_probs = Vec::with_capacity(chunk.len());
            let mut advantages = Vec::with_capacity(chunk.len());
            let mut returns = Vec::with_capacity(chunk.len());
            for &i in chunk {
                actions.extend_from_slice(buffer.action(i));
                old_log_probs.push(buffer.log_probs[i]);
                advantages.push(buffer.advantages[i]);
                returns.push(buffer.returns[i]);
            }
            normalize_advantages(&mut advantages);
            let batch = LossBatch {
                actions: &actions,
                old_log_probs: &old_log_probs,
                advantages: &advantages,
                returns: &returns,
            };
            let (out, cache) = net.forward(&input, Mode::Train)?;
            let (loss, output_grads) = ppo_loss_from_output(&out, batch, coef)?;
            let mut grads = net.backward(&cache, &output_grads)?;
            let norm = grads.global_norm();
            if norm > config.max_grad_norm {
                grads.scale(config.max_grad_norm / (norm + 1e-6));
            }
            optimizer.step(net, &grads)?;
            net.clamp_log_std();
            net.commit_running_stats(&cache);

            stats.loss += loss.loss;
            stats.policy_loss += loss.policy_loss;
            stats.value_loss += loss.value_loss;
            stats.entropy += loss.entropy;
            stats.clip_fraction += loss.clip_fraction;
            stats.approx_kl += loss.approx_kl;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches.max(1) as f64;
    for v in [
        &mut stats.loss,
        &mut stats.policy_loss,
        &mut stats.value_loss,
        &mut stats.entropy,
        &mut stats.clip_fraction,
        &mut stats.approx_kl,
        &mut stats.grad_norm,
    ] {
        *v /= k;
    }
    Ok(stats)
}

/// Folds the batch statistics of the buffer's observations, in rollout
/// order and without any gradient step, into the batch-norm running averages.
pub fn refresh_batch_norm(net: &mut ActorCritic, buffer: &RolloutBuffer, chunk: usize) -> Result<(), PpoError> {
    if !net.has_batch_norm() {
        return Ok(());
    }
    let n = buffer.len();
    let mut start = 0;
    while start < n {
        let mut end = (start + chunk).min(n);
        // keep at least two samples per batch
        if n - end == 1 {
            end = n;
        }
        let input = net.batch_input((start..end).map(|i| buffer.observations.get(i)))?;
        let (_, cache) = net.forward(&input, Mode::Train)?;
        net.commit_running_stats(&cache);
        start = end;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ActorCritic,
    /// Untrained network, as initialized from the seed.
    pub initial_net: ActorCritic,
    /// The environment configuration actually used, layout included.
    pub env_config: EnvConfig,
    pub curve: Vec<CurvePoint>,
    pub stats: Vec<UpdateStats>,
    pub timesteps: u64,
}

/// Walks the environment across rollouts, restarting at the first day
/// whenever an episode ends.
struct Collector {
    env: TradingEnv,
    observation: WindowMatrix,
    continues: bool,
    episode: u64,
    episode_reward: f64,
    timestep: u64,
}

impl Collector {
    fn new(mut env: TradingEnv) -> Result<Self, PpoError> {
        let observation = env.reset(0)?;
        Ok(Self {
            env,
            observation,
            continues: false,
            episode: 0,
            episode_reward: 0.0,
            timestep: 0,
        })
    }

    /// Fills `buffer` with `steps` transitions and returns the bootstrap value.
    fn collect<R: Rng + ?Sized>(
        &mut self,
        net: &ActorCritic,
        buffer: &mut RolloutBuffer,
        steps: usize,
        rng: &mut R,
        curve: &mut Vec<CurvePoint>,
    ) -> Result<f64, PpoError> {
        buffer.clear();
        for _ in 0..steps {
            let sample = sample_action(net, self.observation.as_slice(), rng)?;
            let result = self.env.step(&sample.action)?;
            buffer.push(
                self.observation.as_slice(),
                self.continues,
                &sample.action,
                sample.log_prob,
                sample.value,
                result.reward,
                result.done,
            )?;
            self.timestep += 1;
            self.episode_reward += result.reward;
            if result.done {
                curve.push(CurvePoint {
                    timestep: self.timestep,
                    episode: self.episode,
                    reward: self.episode_reward,
                });
                self.episode += 1;
                self.episode_reward = 0.0;
                self.observation = self.env.reset(0)?;
                self.continues = false;
            } else {
                self.observation = result.observation;
                self.continues = true;
            }
        }
        if buffer.dones.last() == Some(&true) {
            return Ok(0.0);
        }
        Ok(net.infer(&net.batch_input([self.observation.as_slice()])?)?.value[0])
    }
}

/// Trains one agent: `total_timesteps / rollout_length` rounds of rollout
/// collection followed by an update.
pub fn train(
    dataset: Arc<MarketDataset>,
    env_config: &EnvConfig,
    agent: &AgentSpec,
    config: &PpoConfig,
) -> Result<TrainOutcome, PpoError> {
    train_with(dataset, env_config, agent, config, |_| {})
}

/// [`train`] with a callback after each update.
pub fn train_with<F: FnMut(&UpdateStats)>(
    dataset: Arc<MarketDataset>,
    env_config: &EnvConfig,
    agent: &AgentSpec,
    config: &PpoConfig,
    mut on_update: F,
) -> Result<TrainOutcome, PpoError> {
    config.validate()?;
    let mut env_config = env_config.clone();
    env_config.layout = agent.layout_mode(dataset.ticker_count())?;
    let env = TradingEnv::new(dataset.clone(), env_config.clone())?;
    let (height, width) = env.observation_shape();
    let spec = agent.network_spec(height, width, env.action_dim());
    let mut net = init_params(config.seed, &spec)?;
    let mut buffer = RolloutBuffer::new(height, width, env.action_dim());
    let updates = config.update_count();
    if updates > 0 && net.has_batch_norm() {
        // Raw features are far from unit scale, so the running statistics
        // start from one untrained rollout instead of (0, 1).
        let mut warm = Collector::new(TradingEnv::new(dataset, env_config.clone())?)?;
        let mut warm_rng = ChaCha8Rng::seed_from_u64(config.seed);
        warm_rng.set_stream(3);
        warm.collect(&net, &mut buffer, config.rollout_length, &mut warm_rng, &mut Vec::new())?;
        refresh_batch_norm(&mut net, &buffer, config.minibatch_size)?;
    }
    let initial_net = net.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut optimizer = Adam::new(&net, config.learning_rate);
    let mut curve = Vec::new();
    let mut stats = Vec::new();
    let mut collector = if updates > 0 { Some(Collector::new(env)?) } else { None };

    for u in 0..updates {
        let collector = collector.as_mut().expect("created when updates > 0");
        let bootstrap = collector.collect(&net, &mut buffer, config.rollout_length, &mut rng, &mut curve)?;
        buffer.finish(bootstrap, config.gamma, config.gae_lambda)?;
        let mut s = update(&mut net, &mut optimizer, &buffer, config, &mut rng)?;
        s.update = u;
        s.timestep = collector.timestep;
        on_update(&s);
        stats.push(s);
    }
    Ok(TrainOutcome {
        net,
        initial_net,
        env_config,
        curve,
        stats,
        timesteps: collector.map_or(0, |c| c.timestep),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub cumulative_reward: f64,
    pub discounted_return: f64,
    pub steps: usize,
    pub total_costs: f64,
    pub initial_value: f64,
    pub final_value: f64,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub metrics: MetricsReport,
}

/// Runs the deterministic (mean-action) policy over one episode from the
/// first day of `dataset`.
pub fn evaluate(
    net: &ActorCritic,
    dataset: Arc<MarketDataset>,
    env_config: &EnvConfig,
    gamma: f64,
) -> Result<(EvaluationReport, EpisodeOutcome), PpoError> {
    let (height, width) = net.input_shape();
    if height != env_config.window_length {
        return Err(PpoError::ShapeMismatch(format!(
            "checkpoint window length {height} does not match environment window length {}",
            env_config.window_length
        )));
    }
    let mut env = TradingEnv::new(dataset.clone(), env_config.clone())?;
    let (_, env_width) = env.observation_shape();
    if width != env_width || net.action_dim() != env.action_dim() {
        return Err(PpoError::ShapeMismatch(format!(
            "checkpoint expects {width} features and {} actions, dataset gives {env_width} features and {} actions",
            net.action_dim(),
            env.action_dim()
        )));
    }
    env.reset(0)?;
    let outcome = try_run_episode(
        &mut env,
        |w: &WindowMatrix| -> Result<Vec<f64>, PpoError> {
            let out = net.infer(&net.batch_input([w.as_slice()])?)?;
            Ok(out.mean_row(0).to_vec())
        },
        gamma,
    )?;
    let total_costs = outcome.total_costs();
    let metrics = MetricsReport::from_values(&outcome.values, total_costs, 0.0, TRADING_DAYS_PER_YEAR)?;
    let days = dataset.days();
    let report = EvaluationReport {
        cumulative_reward: outcome.total_reward(),
        discounted_return: outcome.discounted_return,
        steps: outcome.transitions.len(),
        total_costs,
        initial_value: outcome.values[0],
        final_value: *outcome.values.last().expect("at least one value"),
        start_date: days[outcome.days[0]],
        end_date: days[*outcome.days.last().expect("at least one day")],
        metrics,
    };
    Ok((report, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_market, SynthConfig};
    use crate::nn::{CnnSpec, ConvSpec, GradientSet, TensorKind};
    use crate::ppo::loss::ppo_loss;
    use crate::ppo::ExtractorKind;

    fn small_cnn() -> CnnSpec {
        CnnSpec {
            conv1: ConvSpec {
                channels: 4,
                kernel: [3, 3],
                stride: [1, 2],
            },
            conv2: ConvSpec {
                channels: 4,
                kernel: [2, 2],
                stride: [1, 2],
            },
            embedding: 16,
        }
    }

    fn market(days: usize, drift: f64, volatility: f64) -> Arc<MarketDataset> {
        let cfg = SynthConfig {
            seed: 3,
            tickers: 2,
            days,
            drift,
            volatility,
        };
        Arc::new(generate_synthetic_market(&cfg).unwrap())
    }

    fn env_config() -> EnvConfig {
        EnvConfig {
            window_length: 5,
            ..EnvConfig::default()
        }
    }

    fn agent(kind: ExtractorKind) -> AgentSpec {
        AgentSpec {
            extractor: kind,
            cnn: small_cnn(),
            mlp: crate::nn::MlpSpec { hidden: vec![8] },
            ..AgentSpec::default()
        }
    }

    fn quick_config(seed: u64) -> PpoConfig {
        PpoConfig {
            rollout_length: 32,
            minibatch_size: 8,
            epochs_per_update: 2,
            total_timesteps: 96,
            seed,
            ..PpoConfig::default()
        }
    }

    fn param_bytes(net: &ActorCritic) -> Vec<u8> {
        net.tensors()
            .iter()
            .filter(|t| t.kind == TensorKind::Param)
            .flat_map(|t| t.data.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    /// A finished rollout from a fresh network, shared by the update tests.
    fn rollout(kind: ExtractorKind, seed: u64) -> (ActorCritic, RolloutBuffer) {
        let ds = market(40, 0.001, 0.02);
        let env = TradingEnv::new(ds, env_config()).unwrap();
        let (h, w) = env.observation_shape();
        let net = init_params(seed, &agent(kind).network_spec(h, w, 2)).unwrap();
        let mut collector = Collector::new(env).unwrap();
        let mut buffer = RolloutBuffer::new(h, w, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = collector
            .collect(&net, &mut buffer, 48, &mut rng, &mut Vec::new())
            .unwrap();
        buffer.finish(b, 0.99, 0.95).unwrap();
        (net, buffer)
    }

    #[test]
    fn too_few_timesteps_means_no_updates() {
        let cfg = PpoConfig {
            total_timesteps: 31,
            ..quick_config(1)
        };
        let out = train(market(40, 0.0, 0.01), &env_config(), &agent(ExtractorKind::Cnn), &cfg).unwrap();
        assert!(out.stats.is_empty() && out.curve.is_empty());
        assert_eq!(out.net, out.initial_net);
        assert_eq!(out.timesteps, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            train(
                market(30, 0.001, 0.02),
                &env_config(),
                &agent(ExtractorKind::Cnn),
                &quick_config(7),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.stats.len(), 3);
        assert!(!a.curve.is_empty());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.stats, b.stats);
        assert_eq!(param_bytes(&a.net), param_bytes(&b.net));
        let c = train(
            market(30, 0.001, 0.02),
            &env_config(),
            &agent(ExtractorKind::Cnn),
            &quick_config(8),
        )
        .unwrap();
        assert_ne!(param_bytes(&a.net), param_bytes(&c.net));
    }

    #[test]
    fn curve_counts_episodes() {
        // 30 days, window 5: 25 steps per episode, 96 steps -> 3 finished episodes
        let out = train(
            market(30, 0.001, 0.02),
            &env_config(),
            &agent(ExtractorKind::Mlp),
            &quick_config(2),
        )
        .unwrap();
        let steps: Vec<u64> = out.curve.iter().map(|p| p.timestep).collect();
        assert_eq!(steps, vec![25, 50, 75]);
        assert_eq!(out.curve[2].episode, 2);
        assert_eq!(out.timesteps, 96);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        for kind in [ExtractorKind::Mlp, ExtractorKind::Cnn] {
            let (mut net, buffer) = rollout(kind, 3);
            let before = param_bytes(&net);
            let cfg = PpoConfig {
                learning_rate: 0.0,
                ..quick_config(3)
            };
            let mut opt = Adam::new(&net, 0.0);
            update(&mut net, &mut opt, &buffer, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(param_bytes(&net), before);
        }
    }

    #[test]
    fn update_is_deterministic_for_both_extractors() {
        for kind in [ExtractorKind::Mlp, ExtractorKind::Cnn] {
            let (net, buffer) = rollout(kind, 4);
            let run = || {
                let mut n = net.clone();
                let mut opt = Adam::new(&n, 3e-4);
                let s = update(
                    &mut n,
                    &mut opt,
                    &buffer,
                    &quick_config(4),
                    &mut ChaCha8Rng::seed_from_u64(9),
                )
                .unwrap();
                (n, s)
            };
            let (a, sa) = run();
            let (b, sb) = run();
            assert_eq!(sa, sb);
            assert_eq!(a, b);
            assert_ne!(param_bytes(&a), param_bytes(&net));
            // 48 samples, minibatch 8, 2 epochs
            assert_eq!(sa.minibatches, 12);
        }
    }

    #[test]
    fn one_step_reduces_loss_on_fixed_batch() {
        for kind in [ExtractorKind::Mlp, ExtractorKind::Cnn] {
            let (net, buffer) = rollout(kind, 5);
            let n = buffer.len();
            let cfg = PpoConfig {
                minibatch_size: n,
                epochs_per_update: 1,
                learning_rate: 1e-4,
                ..quick_config(5)
            };
            let input = net.batch_input((0..n).map(|i| buffer.observations.get(i))).unwrap();
            let mut adv = buffer.advantages.clone();
            normalize_advantages(&mut adv);
            let batch = LossBatch {
                actions: &buffer.actions,
                old_log_probs: &buffer.log_probs,
                advantages: &adv,
                returns: &buffer.returns,
            };
            let coef = LossCoefficients {
                clip_epsilon: 0.2,
                value_coef: 0.5,
                entropy_coef: 0.0,
            };
            let before = ppo_loss(&net, &input, batch, coef, Mode::Train).unwrap();
            let mut trained = net.clone();
            let mut opt = Adam::new(&trained, cfg.learning_rate);
            update(&mut trained, &mut opt, &buffer, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let after = ppo_loss(&trained, &input, batch, coef, Mode::Train).unwrap();
            assert!(after.loss < before.loss, "{kind:?}: {} -> {}", before.loss, after.loss);
        }
    }

    #[test]
    fn gradients_have_network_shape() {
        let (net, _) = rollout(ExtractorKind::Cnn, 6);
        assert!(GradientSet::zeros_like(&net).matches(&net));
    }

    #[test]
    fn evaluation_on_flat_market_only_loses_costs() {
        let ds = market(30, 0.0, 0.0);
        let cfg = env_config();
        for seed in 0..3 {
            let net = init_params(seed, &agent(ExtractorKind::Cnn).network_spec(5, 35, 2)).unwrap();
            let (report, outcome) = evaluate(&net, ds.clone(), &cfg, 0.99).unwrap();
            assert!(report.cumulative_reward <= 0.0);
            let scaled = report.cumulative_reward / cfg.reward_scale;
            assert!((scaled + report.total_costs).abs() < 1e-6 * (1.0 + report.total_costs));
            assert_eq!(outcome.values.len(), report.steps + 1);
            let (again, _) = evaluate(&net, ds.clone(), &cfg, 0.99).unwrap();
            assert_eq!(report, again);
        }
    }

    #[test]
    fn evaluation_shape_errors() {
        let ds = market(30, 0.0, 0.01);
        let net = init_params(0, &agent(ExtractorKind::Mlp).network_spec(5, 35, 2)).unwrap();
        let cfg = EnvConfig {
            window_length: 7,
            ..EnvConfig::default()
        };
        let err = evaluate(&net, ds.clone(), &cfg, 0.99).unwrap_err().to_string();
        assert!(err.contains('5') && err.contains('7'), "{err}");
        let short = Arc::new(ds.slice_days(0, 5).unwrap());
        assert!(matches!(
            evaluate(&net, short, &env_config(), 0.99),
            Err(PpoError::Env(crate::env::EnvError::InsufficientDays { .. }))
        ));
    }
}
