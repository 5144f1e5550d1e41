use super::PpoError;

/// Observation windows stored as a shared run of rows: a window that is the
/// previous one slid by a day adds a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStore {
    height: usize,
    width: usize,
    rows: Vec<f64>,
    row_count: usize,
    /// Last row of each stored window.
    ends: Vec<usize>,
}

impl ObservationStore {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rows: Vec::new(),
            row_count: 0,
            ends: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
        self.row_count = 0;
        self.ends.clear();
    }

    /// Stores `window`. With `continues`, the caller asserts that `window`
    /// is the previously stored window advanced by one row.
    pub fn push(&mut self, window: &[f64], continues: bool) -> Result<(), PpoError> {
        let size = self.height * self.width;
        if window.len() != size {
            return Err(PpoError::Length {
                what: "observation",
                expected: size,
                got: window.len(),
            });
        }
        if continues && !self.ends.is_empty() {
            debug_assert_eq!(
                &window[..size - self.width],
                &self.get(self.len() - 1)[self.width..],
                "continued window does not overlap the previous one"
            );
            self.rows.extend_from_slice(&window[size - self.width..]);
            self.row_count += 1;
        } else {
            self.rows.extend_from_slice(window);
            self.row_count += self.height;
        }
        self.ends.push(self.row_count - 1);
        Ok(())
    }

    /// The `i`-th window as a contiguous row-major slice.
    pub fn get(&self, i: usize) -> &[f64] {
        let end = self.ends[i] + 1;
        &self.rows[(end - self.height) * self.width..end * self.width]
    }
}

/// One rollout of on-policy experience.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub observations: ObservationStore,
    pub action_dim: usize,
    /// `(len, action_dim)` raw sampled actions.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(height: usize, width: usize, action_dim: usize) -> Self {
        Self {
            observations: ObservationStore::new(height, width),
            action_dim,
            actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        for v in [
            &mut self.actions,
            &mut self.log_probs,
            &mut self.rewards,
            &mut self.values,
        ] {
            v.clear();
        }
        self.dones.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        observation: &[f64],
        continues: bool,
        action: &[f64],
        log_prob: f64,
        value: f64,
        reward: f64,
        done: bool,
    ) -> Result<(), PpoError> {
        if action.len() != self.action_dim {
            return Err(PpoError::Length {
                what: "action",
                expected: self.action_dim,
                got: action.len(),
            });
        }
        self.observations.push(observation, continues)?;
        self.actions.extend_from_slice(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
        Ok(())
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    /// Fills `advantages` and `returns`; `bootstrap` is the value estimate of
    /// the observation following the last step.
    pub fn finish(&mut self, bootstrap: f64, gamma: f64, lambda: f64) -> Result<(), PpoError> {
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &self.dones, bootstrap, gamma, lambda)?;
        if let Some(i) = adv.iter().position(|a| !a.is_finite()) {
            return Err(PpoError::NonFinite(format!("advantage at step {i}")));
        }
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

/// Generalized advantage estimation. `dones[t]` marks an episode that ended
/// with step `t`, which cuts both the bootstrap and the advantage trace.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    for (what, len) in [("values", values.len()), ("dones", dones.len())] {
        if len != n {
            return Err(PpoError::Length {
                what,
                expected: n,
                got: len,
            });
        }
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
