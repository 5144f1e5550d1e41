use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use shufflerl::data::SynthConfig;
use shufflerl::features::DEFAULT_WINDOW_LENGTH;
use shufflerl_cli::commands::{self, EvaluateArgs, Split};
use shufflerl_cli::config::RunConfig;
use shufflerl_cli::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "shufflerl",
    version,
    about = "Train and compare trading agents on shuffled or canonical features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align a price CSV and a fundamentals CSV into a dataset archive.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        fundamentals: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic market archive.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        tickers: usize,
        #[arg(long)]
        days: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        drift: f64,
        #[arg(long, default_value_t = 0.01)]
        volatility: f64,
        /// Window length the archive is meant for; only used for the length warning.
        #[arg(long, default_value_t = DEFAULT_WINDOW_LENGTH)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured agent for every seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config's.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to run, overriding the config's (repeatable).
        #[arg(long)]
        seed: Vec<u64>,
        /// Train only this agent.
        #[arg(long, value_parser = ["mlp", "cnn", "cnn-shuffled", "shuffled-cnn"])]
        agent: Option<String>,
    },
    /// Run a checkpoint's mean-action policy over a dataset archive.
    Evaluate {
        /// Checkpoint directory (holding checkpoint.json).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset archive directory.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        split: Option<Split>,
        /// Boundary date; defaults to the one the checkpoint was trained with.
        #[arg(long)]
        split_date: Option<NaiveDate>,
        /// Override the environment window length.
        #[arg(long)]
        window_length: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or reuse) runs of at least two agents and compare their curves.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Vec<u64>,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest {
            prices,
            fundamentals,
            out,
        } => {
            let meta = commands::ingest(&prices, &fundamentals, &out)?;
            println!("wrote {}: {}", out.display(), meta.summary());
        }
        Command::Synth {
            seed,
            tickers,
            days,
            drift,
            volatility,
            window,
            out,
        } => {
            let config = SynthConfig {
                seed,
                tickers,
                days,
                drift,
                volatility,
            };
            let (meta, warning) = commands::synth(&config, window, &out)?;
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            println!("wrote {}: {}", out.display(), meta.summary());
        }
        Command::Train {
            config,
            out,
            seed,
            agent,
        } => {
            let mut config = RunConfig::load(&config)?;
            commands::apply_overrides(&mut config, out, &seed, agent.as_deref())?;
            let (_, runs) = commands::run_all(&config, "train", false)?;
            for r in &runs {
                println!(
                    "{} seed {}: {} episodes -> {}",
                    r.agent,
                    r.seed,
                    r.curve.len(),
                    r.dir.display()
                );
            }
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            split,
            split_date,
            window_length,
            out,
        } => {
            let args = EvaluateArgs {
                checkpoint: &checkpoint,
                dataset: &dataset,
                split,
                split_date,
                window_length,
                out: &out,
            };
            let result = commands::evaluate_checkpoint(&args)?;
            let r = &result.report;
            let sharpe = r.metrics.sharpe.map_or("undefined".to_string(), |s| format!("{s:.4}"));
            println!(
                "{} to {}: cumulative return {:.6}, Sharpe {sharpe}, costs {:.2}, final value {:.2}",
                r.start_date, r.end_date, r.metrics.cumulative_return, r.total_costs, r.final_value
            );
        }
        Command::Compare { config, out, seed } => {
            let mut config = RunConfig::load(&config)?;
            commands::apply_overrides(&mut config, out, &seed, None)?;
            let (manifest, table) = commands::compare(&config)?;
            let reused = manifest.runs.iter().filter(|r| r.reused).count();
            println!(
                "{} runs ({reused} reused); table in {}",
                manifest.runs.len(),
                table.display()
            );
            print!(
                "{}",
                std::fs::read_to_string(&table).map_err(|e| CliError::Io {
                    path: table.clone(),
                    source: e
                })?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
