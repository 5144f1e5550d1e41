use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shufflerl::data::RATIO_NAMES;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shufflerl"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_NETWORK: &str = r#"{
    "cnn": {
        "conv1": {"channels": 2, "kernel": [2, 2], "stride": [1, 2]},
        "conv2": {"channels": 2, "kernel": [2, 2], "stride": [1, 2]},
        "embedding": 8
    },
    "mlp": {"hidden": [8]}
}"#;

fn small_config(dir: &Path, agents: &str) -> PathBuf {
    let text = format!(
        r#"{{
            "dataset": {{"synthetic": {{"seed": 2, "tickers": 2, "days": 40}}}},
            "split_date": "2015-02-16",
            "env": {{"window_length": 5}},
            "agents": {agents},
            "network": {SMALL_NETWORK},
            "ppo": {{"rollout_length": 32, "minibatch_size": 16, "epochs_per_update": 1, "total_timesteps": 64}},
            "seeds": [1],
            "output_dir": "out"
        }}"#
    );
    write(dir, "config.json", &text)
}

fn fundamentals_header() -> String {
    format!("date,ticker,{}\n", RATIO_NAMES.join(","))
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(cli().arg("--help")).status.code(), Some(0));
    assert_eq!(run(cli().arg("--version")).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(cli().arg("frobnicate")).status.code(), Some(1));
    assert_eq!(run(cli().args(["train"])).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let o = run(cli()
        .args(["synth", "--seed", "1", "--tickers", "0", "--days", "10", "--out"])
        .arg(tmp.path().join("x")));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn misspelled_key_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), r#"["cnn"]"#);
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace(r#""epochs_per_update": 1"#, r#""gama": 0.9"#);
    fs::write(&config, text).unwrap();
    let o = run(cli().arg("train").arg("--config").arg(&config));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("did you mean `gamma`?"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn ingest_summarizes_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let prices = write(
        tmp.path(),
        "prices.csv",
        "date,ticker,close\n2020-01-02,AAA,10\n2020-01-02,BBB,20\n2020-01-03,AAA,11\n2020-01-03,BBB,21\n",
    );
    let zeros = vec!["1"; RATIO_NAMES.len()].join(",");
    let fundamentals = write(
        tmp.path(),
        "fund.csv",
        &format!(
            "{}2020-01-01,AAA,{zeros}\n2020-01-01,BBB,{zeros}\n",
            fundamentals_header()
        ),
    );
    let mut prints = Vec::new();
    for out in ["a", "b"] {
        let o = run(cli()
            .arg("ingest")
            .arg("--prices")
            .arg(&prices)
            .arg("--fundamentals")
            .arg(&fundamentals)
            .arg("--out")
            .arg(tmp.path().join(out)));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let s = stdout(&o);
        assert!(
            s.contains("2 tickers (AAA, BBB), 2 days from 2020-01-02 to 2020-01-03"),
            "{s}"
        );
        prints.push(fs::read_to_string(tmp.path().join(out).join("metadata.json")).unwrap());
    }
    let fp = |m: &str| serde_json::from_str::<serde_json::Value>(m).unwrap()["fingerprint"].clone();
    assert_eq!(fp(&prints[0]), fp(&prints[1]));
}

#[test]
fn missing_fundamentals_is_a_data_error_naming_the_ticker() {
    let tmp = tempfile::tempdir().unwrap();
    let prices = write(
        tmp.path(),
        "prices.csv",
        "date,ticker,close\n2020-01-02,AAA,10\n2020-01-02,ZZZ,20\n",
    );
    let zeros = vec!["1"; RATIO_NAMES.len()].join(",");
    let fundamentals = write(
        tmp.path(),
        "fund.csv",
        &format!("{}2020-01-01,AAA,{zeros}\n", fundamentals_header()),
    );
    let o = run(cli()
        .arg("ingest")
        .arg("--prices")
        .arg(&prices)
        .arg("--fundamentals")
        .arg(&fundamentals)
        .arg("--out")
        .arg(tmp.path().join("a")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ZZZ"), "{}", stderr(&o));
}

#[test]
fn synth_warns_when_too_short_for_the_window() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(cli()
        .args(["synth", "--seed", "7", "--tickers", "4", "--days", "50", "--out"])
        .arg(tmp.path().join("m")));
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
    let o = run(cli()
        .args(["synth", "--seed", "7", "--tickers", "4", "--days", "300", "--out"])
        .arg(tmp.path().join("n")));
    assert!(!stderr(&o).contains("warning"));
    assert!(stdout(&o).contains("4 tickers"));
}

#[test]
fn train_records_permutation_and_evaluate_reports_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), r#"["shuffled-cnn", "mlp"]"#);
    let o = run(cli()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .args(["--agent", "shuffled-cnn", "--seed", "5"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["agents"], serde_json::json!(["cnn-shuffled"]));
    assert_eq!(manifest["config"]["seeds"], serde_json::json!([5]));
    assert_eq!(
        manifest["agents"][0]["spec"]["permutation"].as_array().unwrap().len(),
        35
    );
    assert_eq!(manifest["config"]["ppo"]["gamma"], 0.99, "defaults are dumped");
    let run_dir = out.join("cnn-shuffled/seed-5");
    let curve = fs::read_to_string(run_dir.join("curve.csv")).unwrap();
    assert!(curve.starts_with("agent,seed,timestep,episode,reward\n"));
    assert!(curve.lines().skip(1).all(|l| l.starts_with("cnn-shuffled,5,")));

    let archive = tmp.path().join("market");
    let o = run(cli()
        .args([
            "synth",
            "--seed",
            "2",
            "--tickers",
            "2",
            "--days",
            "40",
            "--window",
            "5",
            "--out",
        ])
        .arg(&archive));
    assert_eq!(o.status.code(), Some(0));
    let o = run(cli()
        .arg("evaluate")
        .arg("--checkpoint")
        .arg(&run_dir)
        .arg("--dataset")
        .arg(&archive)
        .args(["--split", "test", "--out"])
        .arg(tmp.path().join("eval")));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["split"], "test");
    assert_eq!(report["split_date"], "2015-02-16");
    // the first decision comes once the 5-day window has filled
    assert_eq!(report["report"]["start_date"], "2015-02-20");
    for key in ["sharpe", "cumulative_return", "total_costs"] {
        assert!(report["report"]["metrics"].get(key).is_some(), "{key}");
    }
    let trace = fs::read_to_string(tmp.path().join("eval/trace.csv")).unwrap();
    assert!(trace.starts_with("day,balance,portfolio_value,reward,costs,turbulence,holdings_SYN00,holdings_SYN01\n"));

    let o = run(cli()
        .arg("evaluate")
        .arg("--checkpoint")
        .arg(&run_dir)
        .arg("--dataset")
        .arg(&archive)
        .args(["--window-length", "7", "--out"])
        .arg(tmp.path().join("bad")));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("window length 5") && err.contains("window length 7"),
        "{err}"
    );
}

#[test]
fn compare_needs_two_agents_and_reuses_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), r#"["cnn"]"#);
    let o = run(cli().arg("compare").arg("--config").arg(&config));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least two agents"));

    let config = small_config(tmp.path(), r#"["mlp", "cnn"]"#);
    let first = run(cli().arg("compare").arg("--config").arg(&config));
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(stdout(&first).contains("2 runs (0 reused)"));
    let second = run(cli().arg("compare").arg("--config").arg(&config));
    assert!(stdout(&second).contains("2 runs (2 reused)"), "{}", stdout(&second));

    // A changed hyperparameter invalidates the cache.
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace(r#""epochs_per_update": 1"#, r#""epochs_per_update": 2"#);
    fs::write(&config, text).unwrap();
    let third = run(cli().arg("compare").arg("--config").arg(&config));
    assert!(stdout(&third).contains("2 runs (0 reused)"), "{}", stdout(&third));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), r#"["mlp"]"#);
    let o = run(cli()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .env("SHUFFLERL_THREADS", "zero"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SHUFFLERL_THREADS"));
}
