//! Reproducibility manifests written next to every run's artifacts.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use shufflerl::env::EnvConfig;
use shufflerl::ppo::{AgentSpec, PpoConfig};

use crate::archive::write_json;
use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
/// Marker written into a run directory once all its artifacts exist.
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub fingerprint: String,
    pub tickers: Vec<String>,
    pub days: usize,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
}

/// An agent as trained, with any shuffled layout's permutation spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub name: String,
    pub spec: AgentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub agent: String,
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub dir: PathBuf,
    /// True when a cached run with the same key was kept instead of retraining.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub crate_version: String,
    pub command: String,
    /// The configuration with every default filled in.
    pub config: RunConfig,
    pub dataset: DatasetRecord,
    /// Fingerprint of the days actually trained on.
    pub training_fingerprint: String,
    pub training_days: usize,
    pub agents: Vec<AgentRecord>,
    pub runs: Vec<RunRecord>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// Everything that determines a run's artifacts. Equal keys mean a cached
/// run can be reused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunKey {
    pub crate_version: String,
    pub agent: AgentSpec,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub training_fingerprint: String,
    pub split_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub key: RunKey,
    pub timesteps: u64,
    pub episodes: usize,
    pub updates: usize,
}

impl RunSummary {
    /// The summary in `dir`, if present and readable.
    pub fn find(dir: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(dir.join(RUN_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}
