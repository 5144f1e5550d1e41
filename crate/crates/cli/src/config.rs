//! Run configuration: strict JSON with explicit defaults.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use shufflerl::data::SynthConfig;
use shufflerl::env::{EnvConfig, LayoutMode};
use shufflerl::features::PermutationSpec;
use shufflerl::nn::{CnnSpec, MlpSpec};
use shufflerl::ppo::{AgentSpec, PpoConfig, AGENT_NAMES};

use crate::error::CliError;

/// Where the market comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A directory written by `ingest` or `synth`.
    Archive(PathBuf),
    Synthetic(SynthConfig),
}

/// Architecture settings shared by every agent of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub cnn: CnnSpec,
    pub mlp: MlpSpec,
    pub shared_trunk: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            cnn: CnnSpec::default(),
            mlp: MlpSpec::default(),
            shared_trunk: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Training uses the days before this date; evaluation's `test` split
    /// starts on it.
    #[serde(default)]
    pub split_date: Option<NaiveDate>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default = "default_agents")]
    pub agents: Vec<String>,
    #[serde(default)]
    pub network: NetworkConfig,
    /// Explicit gather permutation for shuffled agents.
    #[serde(default)]
    pub permutation: Option<PermutationSpec>,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_agents() -> Vec<String> {
    AGENT_NAMES.iter().map(|s| s.to_string()).collect()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut config = Self::from_json(&text).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetSource::Archive(p) = &mut config.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    /// Parses and validates config text; the error message suggests the
    /// closest known key for a misspelled one.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| explain(&e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.env.validate().map_err(|e| e.to_string())?;
        if self.env.layout != LayoutMode::Canonical {
            return Err("env.layout must stay canonical; choose the shuffled layout through `agents`".into());
        }
        self.ppo.validate().map_err(|e| e.to_string())?;
        if self.ppo.seed != 0 {
            return Err("ppo.seed is set per run from `seeds`; leave it out".into());
        }
        if self.agents.is_empty() {
            return Err("`agents` must list at least one agent".into());
        }
        let mut seen = HashSet::new();
        for name in &self.agents {
            if AgentSpec::preset(name).is_none() {
                let hint = suggest(name, &AGENT_NAMES)
                    .map(|s| format!("; did you mean `{s}`?"))
                    .unwrap_or_default();
                return Err(format!(
                    "unknown agent `{name}` (expected one of {}){hint}",
                    AGENT_NAMES.join(", ")
                ));
            }
            if !seen.insert(canonical_agent_name(name)) {
                return Err(format!("agent `{name}` listed twice"));
            }
        }
        if self.seeds.is_empty() {
            return Err("`seeds` must list at least one seed".into());
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            return Err("`seeds` contains duplicates".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err("`output_dir` must not be empty".into());
        }
        if let Some(p) = &self.permutation {
            if !self.agents.iter().any(|a| canonical_agent_name(a) == "cnn-shuffled") {
                return Err(format!(
                    "a permutation of length {} was given but no shuffled agent is listed",
                    p.len()
                ));
            }
        }
        Ok(())
    }

    /// The resolved agent for one of the configured names.
    pub fn agent_spec(&self, name: &str) -> Result<AgentSpec, CliError> {
        let mut spec = AgentSpec::preset(name).ok_or_else(|| CliError::Usage(format!("unknown agent `{name}`")))?;
        spec.cnn = self.network.cnn.clone();
        spec.mlp = self.network.mlp.clone();
        spec.shared_trunk = self.network.shared_trunk;
        if spec.layout == shufflerl::ppo::FeatureOrder::Shuffled {
            spec.permutation = self.permutation.clone();
        }
        Ok(spec)
    }
}

/// `shuffled-cnn` is accepted as an alias of `cnn-shuffled`.
pub fn canonical_agent_name(name: &str) -> &str {
    if name == "shuffled-cnn" {
        "cnn-shuffled"
    } else {
        name
    }
}

/// Closest candidate within an edit distance of about a third of its length.
pub fn suggest<'a>(unknown: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::levenshtein(unknown, c), *c))
        .filter(|(d, c)| *d <= (c.len() / 3).max(2))
        .min()
        .map(|(_, c)| c)
}

/// Rewrites serde's unknown-key errors into a message with a suggestion.
fn explain(message: &str) -> String {
    let unknown =
        Regex::new(r"unknown (field|variant) `([^`]*)`, (?:expected|there are no) ?(.*)").expect("valid regex");
    let Some(caps) = unknown.captures(message) else {
        return message.to_string();
    };
    let quoted = Regex::new(r"`([^`]*)`").expect("valid regex");
    let candidates: Vec<&str> = quoted
        .captures_iter(&caps[3])
        .map(|c| c.get(1).expect("group").as_str())
        .collect();
    let what = if &caps[1] == "field" { "key" } else { "value" };
    match suggest(&caps[2], &candidates) {
        Some(s) => format!("unknown {what} `{}`; did you mean `{s}`? ({message})", &caps[2]),
        None => format!("unknown {what} `{}` ({message})", &caps[2]),
    }
}
