//! The five subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shufflerl::data::{
    align_forward_fill, generate_synthetic_market, load_fundamentals, load_prices, split_by_date, MarketDataset,
    SynthConfig,
};
use shufflerl::env::{EnvConfig, LayoutMode};
use shufflerl::metrics::{compare_runs, CurvePoint, LabeledCurve};
use shufflerl::nn::{load_checkpoint, save_checkpoint};
use shufflerl::ppo::{evaluate, train, AgentSpec, EvaluationReport, PpoConfig};

use crate::archive::{read_archive, write_archive, write_json, ArchiveMetadata};
use crate::config::{canonical_agent_name, DatasetSource, RunConfig};
use crate::error::CliError;
use crate::manifest::{AgentRecord, DatasetRecord, RunKey, RunManifest, RunRecord, RunSummary, RUN_FILE};

pub const CURVE_FILE: &str = "curve.csv";
pub const STATS_FILE: &str = "stats.jsonl";
pub const CURVES_FILE: &str = "curves.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const ALIGNED_FILE: &str = "aligned.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const CURVE_HEADER: &str = "agent,seed,timestep,episode,reward";
/// Caps the number of runs trained at once.
pub const THREADS_ENV: &str = "SHUFFLERL_THREADS";

pub fn ingest(prices: &Path, fundamentals: &Path, out: &Path) -> Result<ArchiveMetadata, CliError> {
    let price_table = load_prices(prices)?;
    let fundamental_table = load_fundamentals(fundamentals)?;
    let dataset = align_forward_fill(&price_table, &fundamental_table)?;
    let source = serde_json::json!({
        "prices": prices.display().to_string(),
        "fundamentals": fundamentals.display().to_string(),
    });
    write_archive(&dataset, out, source)
}

/// Writes a synthetic archive. The second value is a warning when the
/// market is too short to train at `window_length`.
pub fn synth(
    config: &SynthConfig,
    window_length: usize,
    out: &Path,
) -> Result<(ArchiveMetadata, Option<String>), CliError> {
    if config.tickers == 0 {
        return Err(CliError::Usage("--tickers must be at least 1".into()));
    }
    if config.days == 0 {
        return Err(CliError::Usage("--days must be at least 1".into()));
    }
    let dataset = generate_synthetic_market(config)?;
    let warning = (config.days < window_length + 1).then(|| {
        format!(
            "{} days leave no step after a window of {window_length}; training at that window length will fail",
            config.days
        )
    });
    let source = serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((
        write_archive(&dataset, out, serde_json::json!({ "synthetic": source }))?,
        warning,
    ))
}

pub fn load_dataset(source: &DatasetSource) -> Result<MarketDataset, CliError> {
    match source {
        DatasetSource::Archive(dir) => Ok(read_archive(dir)?.0),
        DatasetSource::Synthetic(c) => Ok(generate_synthetic_market(c)?),
    }
}

fn dataset_record(ds: &MarketDataset) -> DatasetRecord {
    DatasetRecord {
        fingerprint: ds.fingerprint(),
        tickers: ds.tickers().iter().map(|t| t.to_string()).collect(),
        days: ds.len(),
        first_day: ds.days()[0],
        last_day: *ds.days().last().expect("datasets are non-empty"),
    }
}

/// The training portion of `ds`: the days before the split date, if any.
fn training_part(ds: &MarketDataset, split_date: Option<NaiveDate>) -> Result<MarketDataset, CliError> {
    match split_date {
        Some(d) => Ok(split_by_date(ds, d)?.0),
        None => Ok(ds.clone()),
    }
}

/// One agent trained with one seed.
#[derive(Debug, Clone)]
struct PlannedRun {
    agent: String,
    seed: u64,
    dir: PathBuf,
    key: RunKey,
    reused: bool,
}

#[derive(Debug, Clone)]
pub struct CompletedRun {
    pub agent: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub reused: bool,
    pub curve: Vec<CurvePoint>,
}

/// Metadata stored inside each checkpoint so `evaluate` can rebuild the env.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointContext {
    pub agent: String,
    pub env_config: EnvConfig,
    pub gamma: f64,
    pub split_date: Option<NaiveDate>,
    pub training_fingerprint: String,
}

/// Plans, records and runs every (agent, seed) pair of `config`. With
/// `reuse`, run directories whose summary matches the planned key are kept.
pub fn run_all(config: &RunConfig, command: &str, reuse: bool) -> Result<(RunManifest, Vec<CompletedRun>), CliError> {
    let out = &config.output_dir;
    let pool = thread_pool()?;
    let dataset = load_dataset(&config.dataset)?;
    let training = training_part(&dataset, config.split_date)?;
    let training_fingerprint = training.fingerprint();
    let ticker_count = training.ticker_count();

    let mut agents = Vec::new();
    for name in &config.agents {
        let mut spec = config.agent_spec(name)?;
        if let LayoutMode::Shuffled { permutation } = spec.layout_mode(ticker_count)? {
            spec.permutation = Some(permutation);
        }
        agents.push(AgentRecord {
            name: canonical_agent_name(name).to_string(),
            spec,
        });
    }

    let mut plans = Vec::new();
    for agent in &agents {
        for &seed in &config.seeds {
            let dir = PathBuf::from(&agent.name).join(format!("seed-{seed}"));
            let key = RunKey {
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                agent: agent.spec.clone(),
                env: config.env.clone(),
                ppo: PpoConfig {
                    seed,
                    ..config.ppo.clone()
                },
                training_fingerprint: training_fingerprint.clone(),
                split_date: config.split_date,
            };
            let reused = reuse && RunSummary::find(&out.join(&dir)).is_some_and(|s| s.key == key);
            plans.push(PlannedRun {
                agent: agent.name.clone(),
                seed,
                dir,
                key,
                reused,
            });
        }
    }

    let manifest = RunManifest {
        format_version: crate::manifest::MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config: config.clone(),
        dataset: dataset_record(&dataset),
        training_fingerprint,
        training_days: training.len(),
        agents,
        runs: plans
            .iter()
            .map(|p| RunRecord {
                agent: p.agent.clone(),
                seed: p.seed,
                dir: p.dir.clone(),
                reused: p.reused,
            })
            .collect(),
    };
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    manifest.write(out)?;

    let training = Arc::new(training);
    let completed: Vec<CompletedRun> = pool.install(|| {
        plans
            .par_iter()
            .map(|p| execute(p, &training, out))
            .collect::<Result<_, CliError>>()
    })?;

    let curves = out.join(CURVES_FILE);
    let mut w = BufWriter::new(File::create(&curves).map_err(CliError::io(&curves))?);
    writeln!(w, "{CURVE_HEADER}").map_err(CliError::io(&curves))?;
    for run in &completed {
        write_curve_rows(&mut w, &run.agent, run.seed, &run.curve).map_err(CliError::io(&curves))?;
    }
    w.flush().map_err(CliError::io(&curves))?;
    Ok((manifest, completed))
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker threads: {e}")))
}

fn execute(plan: &PlannedRun, training: &Arc<MarketDataset>, out: &Path) -> Result<CompletedRun, CliError> {
    let dir = out.join(&plan.dir);
    if plan.reused {
        let curve = read_curve(&dir.join(CURVE_FILE))?;
        eprintln!(
            "{} seed {}: reusing cached run in {}",
            plan.agent,
            plan.seed,
            dir.display()
        );
        return Ok(CompletedRun {
            agent: plan.agent.clone(),
            seed: plan.seed,
            dir,
            reused: true,
            curve,
        });
    }
    // A stale marker must not survive a partial rewrite.
    let marker = dir.join(RUN_FILE);
    if marker.exists() {
        fs::remove_file(&marker).map_err(CliError::io(&marker))?;
    }
    let outcome = train(training.clone(), &plan.key.env, &plan.key.agent, &plan.key.ppo)?;
    let context = CheckpointContext {
        agent: plan.agent.clone(),
        env_config: outcome.env_config.clone(),
        gamma: plan.key.ppo.gamma,
        split_date: plan.key.split_date,
        training_fingerprint: plan.key.training_fingerprint.clone(),
    };
    let metadata = serde_json::to_value(&context).map_err(|e| CliError::Runtime(e.to_string()))?;
    save_checkpoint(&outcome.net, plan.seed, metadata, &dir)?;

    let curve_path = dir.join(CURVE_FILE);
    let mut w = BufWriter::new(File::create(&curve_path).map_err(CliError::io(&curve_path))?);
    writeln!(w, "{CURVE_HEADER}").map_err(CliError::io(&curve_path))?;
    write_curve_rows(&mut w, &plan.agent, plan.seed, &outcome.curve).map_err(CliError::io(&curve_path))?;
    w.flush().map_err(CliError::io(&curve_path))?;

    let stats_path = dir.join(STATS_FILE);
    let mut w = BufWriter::new(File::create(&stats_path).map_err(CliError::io(&stats_path))?);
    for s in &outcome.stats {
        let line = serde_json::to_string(s).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(w, "{line}").map_err(CliError::io(&stats_path))?;
    }
    w.flush().map_err(CliError::io(&stats_path))?;

    let summary = RunSummary {
        key: plan.key.clone(),
        timesteps: outcome.timesteps,
        episodes: outcome.curve.len(),
        updates: outcome.stats.len(),
    };
    write_json(&marker, &summary)?;
    let last = outcome.curve.last().map_or("no finished episode".to_string(), |p| {
        format!("last episode reward {}", p.reward)
    });
    eprintln!(
        "{} seed {}: {} timesteps, {}",
        plan.agent, plan.seed, outcome.timesteps, last
    );
    Ok(CompletedRun {
        agent: plan.agent.clone(),
        seed: plan.seed,
        dir,
        reused: false,
        curve: outcome.curve,
    })
}

fn write_curve_rows<W: Write>(w: &mut W, agent: &str, seed: u64, curve: &[CurvePoint]) -> std::io::Result<()> {
    for p in curve {
        writeln!(w, "{agent},{seed},{},{},{}", p.timestep, p.episode, p.reward)?;
    }
    Ok(())
}

/// Reads the points of a per-run curve CSV.
pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(CliError::Data(format!(
            "{}: expected header `{CURVE_HEADER}`",
            path.display()
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || CliError::Data(format!("{}:{}: malformed curve row", path.display(), i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            let [_, _, t, e, r] = fields[..] else { return Err(bad()) };
            Ok(CurvePoint {
                timestep: t.parse().map_err(|_| bad())?,
                episode: e.parse().map_err(|_| bad())?,
                reward: r.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn compare(config: &RunConfig) -> Result<(RunManifest, PathBuf), CliError> {
    if config.agents.len() < 2 {
        return Err(CliError::Config(format!(
            "compare needs at least two agents, the config lists {}",
            config.agents.len()
        )));
    }
    let (manifest, runs) = run_all(config, "compare", true)?;
    let curves: Vec<LabeledCurve> = runs
        .iter()
        .map(|r| LabeledCurve {
            label: format!("{}/seed-{}", r.agent, r.seed),
            points: r.curve.clone(),
        })
        .collect();
    let comparison = compare_runs(&curves).map_err(|e| {
        CliError::Runtime(format!(
            "{e}; raise ppo.total_timesteps so every run finishes an episode"
        ))
    })?;
    let out = &config.output_dir;
    let table = out.join(COMPARISON_FILE);
    let file = File::create(&table).map_err(CliError::io(&table))?;
    comparison
        .write_table_csv(BufWriter::new(file))
        .map_err(CliError::io(&table))?;
    let aligned = out.join(ALIGNED_FILE);
    let file = File::create(&aligned).map_err(CliError::io(&aligned))?;
    comparison
        .write_aligned_csv(BufWriter::new(file))
        .map_err(CliError::io(&aligned))?;
    Ok((manifest, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub checkpoint: PathBuf,
    pub agent: String,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub split: Option<Split>,
    pub split_date: Option<NaiveDate>,
    pub report: EvaluationReport,
}

pub struct EvaluateArgs<'a> {
    pub checkpoint: &'a Path,
    pub dataset: &'a Path,
    pub split: Option<Split>,
    pub split_date: Option<NaiveDate>,
    pub window_length: Option<usize>,
    pub out: &'a Path,
}

pub fn evaluate_checkpoint(args: &EvaluateArgs) -> Result<EvaluationOutput, CliError> {
    let (net, manifest) = load_checkpoint(args.checkpoint)?;
    let context: CheckpointContext = serde_json::from_value(manifest.metadata.clone()).map_err(|e| {
        CliError::Data(format!(
            "{}: checkpoint lacks environment metadata: {e}",
            args.checkpoint.display()
        ))
    })?;
    let (dataset, _) = read_archive(args.dataset)?;
    let split_date = args.split_date.or(context.split_date);
    let part = match args.split {
        None => dataset,
        Some(split) => {
            let date = split_date.ok_or_else(|| {
                CliError::Usage("--split needs --split-date or a checkpoint trained with a split date".into())
            })?;
            let (train, test) = split_by_date(&dataset, date)?;
            if split == Split::Train {
                train
            } else {
                test
            }
        }
    };
    let mut env_config = context.env_config.clone();
    if let Some(w) = args.window_length {
        env_config.window_length = w;
    }
    let fingerprint = part.fingerprint();
    let part = Arc::new(part);
    let (report, outcome) = evaluate(&net, part.clone(), &env_config, context.gamma)?;
    let output = EvaluationOutput {
        checkpoint: args.checkpoint.to_path_buf(),
        agent: context.agent,
        seed: manifest.seed,
        dataset_fingerprint: fingerprint,
        split: args.split,
        split_date: args.split.and(split_date),
        report,
    };
    fs::create_dir_all(args.out).map_err(CliError::io(args.out))?;
    write_json(&args.out.join(METRICS_FILE), &output)?;
    let trace = args.out.join(TRACE_FILE);
    let file = File::create(&trace).map_err(CliError::io(&trace))?;
    let mut w = BufWriter::new(file);
    outcome.write_trace_csv(&part, &mut w).map_err(CliError::io(&trace))?;
    w.flush().map_err(CliError::io(&trace))?;
    Ok(output)
}

/// Restricts `config` to the CLI overrides so the manifest records what ran.
pub fn apply_overrides(
    config: &mut RunConfig,
    out: Option<PathBuf>,
    seeds: &[u64],
    agent: Option<&str>,
) -> Result<(), CliError> {
    if let Some(out) = out {
        config.output_dir = out;
    }
    if !seeds.is_empty() {
        config.seeds = seeds.to_vec();
    }
    if let Some(agent) = agent {
        config.agents = vec![canonical_agent_name(agent).to_string()];
        if AgentSpec::preset(agent).is_some_and(|s| s.layout == shufflerl::ppo::FeatureOrder::Canonical) {
            config.permutation = None;
        }
    }
    config.validate().map_err(CliError::Config)
}
