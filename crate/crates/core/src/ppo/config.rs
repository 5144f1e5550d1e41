use serde::{Deserialize, Serialize};

use super::PpoError;
use crate::env::LayoutMode;
use crate::features::{FeatureLayout, PermutationSpec};
use crate::nn::{CnnSpec, ExtractorSpec, MlpSpec, NetworkSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub rollout_length: usize,
    pub minibatch_size: usize,
    pub epochs_per_update: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_timesteps: u64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            rollout_length: 2048,
            minibatch_size: 64,
            epochs_per_update: 10,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            total_timesteps: 100 * 2048,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: String| Err(PpoError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_epsilon.is_finite() && self.clip_epsilon > 0.0) {
            return bad(format!("clip_epsilon must be positive, got {}", self.clip_epsilon));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        for (name, v) in [
            ("rollout_length", self.rollout_length),
            ("minibatch_size", self.minibatch_size),
            ("epochs_per_update", self.epochs_per_update),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("value_coef", self.value_coef), ("entropy_coef", self.entropy_coef)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.max_grad_norm.is_finite() && self.max_grad_norm > 0.0) {
            return bad(format!("max_grad_norm must be positive, got {}", self.max_grad_norm));
        }
        Ok(())
    }

    /// Number of rollout + update cycles that fit in `total_timesteps`.
    pub fn update_count(&self) -> u64 {
        self.total_timesteps / self.rollout_length as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureOrder {
    Canonical,
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSpec {
    pub extractor: ExtractorKind,
    pub layout: FeatureOrder,
    /// Explicit permutation for the shuffled layout; the ticker-block
    /// permutation when absent.
    pub permutation: Option<PermutationSpec>,
    pub cnn: CnnSpec,
    pub mlp: MlpSpec,
    pub shared_trunk: bool,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            extractor: ExtractorKind::Cnn,
            layout: FeatureOrder::Canonical,
            permutation: None,
            cnn: CnnSpec::default(),
            mlp: MlpSpec::default(),
            shared_trunk: true,
        }
    }
}

pub const AGENT_NAMES: [&str; 3] = ["mlp", "cnn", "cnn-shuffled"];

impl AgentSpec {
    /// `mlp`, `cnn` or `cnn-shuffled` (also accepted: `shuffled-cnn`).
    pub fn preset(name: &str) -> Option<Self> {
        let (extractor, layout) = match name {
            "mlp" => (ExtractorKind::Mlp, FeatureOrder::Canonical),
            "cnn" => (ExtractorKind::Cnn, FeatureOrder::Canonical),
            "cnn-shuffled" | "shuffled-cnn" => (ExtractorKind::Cnn, FeatureOrder::Shuffled),
            _ => return None,
        };
        Some(Self {
            extractor,
            layout,
            ..Self::default()
        })
    }

    pub fn label(&self) -> String {
        let base = match self.extractor {
            ExtractorKind::Mlp => "mlp",
            ExtractorKind::Cnn => "cnn",
        };
        match self.layout {
            FeatureOrder::Canonical => base.to_string(),
            FeatureOrder::Shuffled => format!("{base}-shuffled"),
        }
    }

    /// The observation layout for a market of `ticker_count` tickers.
    pub fn layout_mode(&self, ticker_count: usize) -> Result<LayoutMode, PpoError> {
        let layout = FeatureLayout::new(ticker_count);
        if self.layout == FeatureOrder::Canonical {
            if self.permutation.is_some() {
                return Err(PpoError::InvalidConfig(
                    "a permutation was given for the canonical layout".into(),
                ));
            }
            return Ok(LayoutMode::Canonical);
        }
        let permutation = match &self.permutation {
            Some(p) if p.len() != layout.total() => {
                return Err(PpoError::InvalidConfig(format!(
                    "permutation has length {}, the market's feature vector has {}",
                    p.len(),
                    layout.total()
                )))
            }
            Some(p) => p.clone(),
            None => PermutationSpec::ticker_block(layout),
        };
        Ok(LayoutMode::Shuffled { permutation })
    }

    pub fn network_spec(&self, window_length: usize, width: usize, action_dim: usize) -> NetworkSpec {
        let extractor = match self.extractor {
            ExtractorKind::Cnn => ExtractorSpec::Cnn(self.cnn.clone()),
            ExtractorKind::Mlp => ExtractorSpec::Mlp(self.mlp.clone()),
        };
        let mut spec = NetworkSpec::new(window_length, width, action_dim, extractor);
        spec.shared_trunk = self.shared_trunk;
        spec
    }
}
