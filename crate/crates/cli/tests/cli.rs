//! End-to-end runs of the `regmix` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic").join(name)
}

fn regmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regmix")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ingests the shipped fixture into `dir/ingest` and returns the panel path.
fn ingest(dir: &Path) -> PathBuf {
    let out = dir.join("ingest");
    let run = regmix(&[
        "ingest",
        "--survey",
        s(&fixture("survey.csv")),
        "--realizations",
        s(&fixture("realizations.csv")),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    out.join("panel.csv")
}

fn backtest(panel: &Path, out: &Path, extra: &[&str]) -> Output {
    let real = fixture("realizations.csv");
    let mut args = vec!["backtest", "--panel", s(panel), "--realizations", s(&real), "--out-dir", s(out)];
    args.extend_from_slice(extra);
    regmix(&args)
}

#[test]
fn test_ingest_outputs_and_idempotence() {
    let tmp = TempDir::new().unwrap();
    let panel = ingest(tmp.path());
    let dir = panel.parent().unwrap();
    let text = read(dir, "panel.csv");
    assert!(text.starts_with("survey_date,forecaster_id,bin_lower,bin_upper,probability\n"));
    assert_eq!(text.lines().count(), 1 + 19 * 83 * 11);
    assert!(read(dir, "ingest.log").contains("excluded 8"));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir, "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "ingest");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let again = tmp.path().join("again");
    let run = regmix(&[
        "ingest",
        "--survey",
        s(&panel),
        "--realizations",
        s(&fixture("realizations.csv")),
        "--out-dir",
        s(&again),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(read(&again, "panel.csv"), text);
}

#[test]
fn test_ingest_straddling_bin_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let survey = tmp.path().join("survey.csv");
    let real = tmp.path().join("real.csv");
    fs::write(
        &survey,
        "survey_date,forecaster_id,bin_lower,bin_upper,probability\n\
         2001-Q1,a,-inf,0.25,0.4\n\
         2001-Q1,a,0.25,inf,0.6\n",
    )
    .unwrap();
    fs::write(&real, "survey_date,realized_value\n2001-Q1,1.0\n").unwrap();
    let run = regmix(&["ingest", "--survey", s(&survey), "--realizations", s(&real), "--out-dir", s(tmp.path())]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("line 2"), "{}", stderr(&run));

    let run = regmix(&["ingest", "--survey", "/nonexistent.csv", "--realizations", s(&real), "--out-dir", s(tmp.path())]);
    assert_eq!(code(&run), 2);
}

#[test]
fn test_backtest_methods() {
    let tmp = TempDir::new().unwrap();
    let panel = ingest(tmp.path());

    let avg = tmp.path().join("avg");
    let run = backtest(&panel, &avg, &["--method", "simple-average"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let scores = read(&avg, "scores.csv");
    assert!(scores.lines().next().unwrap().contains("log_predictive_density,log_score"));
    assert_eq!(scores.lines().count(), 1 + 75);
    assert_eq!(read(&avg, "weights.csv").lines().count(), 1 + 75 * 19);
    assert_eq!(read(&avg, "mixtures.csv").lines().count(), 1 + 75 * 11);

    let best = tmp.path().join("best");
    let run = backtest(&panel, &best, &["--method", "best-le-n", "--n", "4"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let log = read(&best, "backtest.log");
    assert!(log.contains("candidates per round: 5035"));
    assert_eq!(log.matches("candidates 5035").count(), 75);

    let simplex = tmp.path().join("simplex");
    let entropy = tmp.path().join("entropy");
    assert_eq!(code(&backtest(&panel, &simplex, &["--method", "simplex"])), 0);
    assert_eq!(code(&backtest(&panel, &entropy, &["--method", "entropy", "--lambda", "0"])), 0);
    assert_eq!(read(&simplex, "scores.csv"), read(&entropy, "scores.csv"));

    let ridge = tmp.path().join("ridge");
    assert_eq!(code(&backtest(&panel, &ridge, &["--method", "ridge", "--lambda", "2", "--strict-rolling"])), 0);
    assert_eq!(read(&ridge, "scores.csv").lines().count(), 1 + 83 - 20);
}

#[test]
fn test_backtest_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let panel = ingest(tmp.path());
    let out = tmp.path().join("x");
    assert_eq!(code(&backtest(&panel, &out, &["--method", "nope"])), 2);
    assert_eq!(code(&backtest(&panel, &out, &["--method", "ridge"])), 2);
    assert_eq!(code(&backtest(&panel, &out, &["--method", "best-n"])), 2);
    assert_eq!(code(&backtest(&panel, &out, &["--method", "ridge", "--lambda", "-1"])), 2);
    assert_eq!(code(&backtest(&panel, &out, &["--method", "simplex", "--alpha", "2"])), 2);
    // 19 forecasters is beyond the subset-enumeration limit
    assert_eq!(code(&backtest(&panel, &out, &["--method", "peg-ridge", "--lambda", "1"])), 2);
}

#[test]
fn test_backtest_computation_error_exits_one() {
    // every forecaster puts zero mass on the first realization, so the
    // in-sample objective is infinite everywhere on the simplex
    let tmp = TempDir::new().unwrap();
    let panel = tmp.path().join("panel.csv");
    let real = tmp.path().join("real.csv");
    let mut rows = String::from("survey_date,forecaster_id,bin_lower,bin_upper,probability\n");
    let mut reals = String::from("survey_date,realized_value\n");
    for t in 0..4 {
        let date = format!("2001-Q{}", t + 1);
        for id in ["a", "b"] {
            rows.push_str(&format!("{date},{id},-inf,0,0\n{date},{id},0,inf,1\n"));
        }
        reals.push_str(&format!("{date},{}\n", if t == 0 { -1.0 } else { 1.0 }));
    }
    fs::write(&panel, rows).unwrap();
    fs::write(&real, reals).unwrap();
    let run = regmix(&[
        "backtest",
        "--panel",
        s(&panel),
        "--realizations",
        s(&real),
        "--method",
        "simplex",
        "--window",
        "2",
        "--burn-in",
        "1",
        "--out-dir",
        s(&tmp.path().join("out")),
    ]);
    assert_eq!(code(&run), 1, "{}", stderr(&run));
}

#[test]
fn test_backtest_independent_of_worker_count() {
    let tmp = TempDir::new().unwrap();
    let panel = ingest(tmp.path());
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    assert_eq!(code(&backtest(&panel, &one, &["--method", "best-n", "--n", "3", "--workers", "1"])), 0);
    assert_eq!(code(&backtest(&panel, &four, &["--method", "best-n", "--n", "3", "--workers", "4"])), 0);
    for f in ["scores.csv", "weights.csv", "mixtures.csv", "summary.csv", "backtest.log"] {
        assert_eq!(read(&one, f), read(&four, f), "{f}");
    }
}

fn montecarlo(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["montecarlo", "--out-dir", s(out)];
    args.extend_from_slice(extra);
    regmix(&args)
}

const SMALL: [&str; 8] = ["--ridge-grid", "1,10", "--entropy-grid", "0.1,1", "--best-n", "2,4", "--best-le-n", "3"];

#[test]
fn test_montecarlo_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let mut args = vec!["--dgp", "1", "--reps", "4", "--seed", "7", "--workers", "1"];
    args.extend(SMALL);
    assert_eq!(code(&montecarlo(&a, &args)), 0);
    args[7] = "3";
    assert_eq!(code(&montecarlo(&b, &args)), 0);
    for f in ["table.csv", "curves.csv", "montecarlo.log"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(read(&a, "curves.csv").lines().count(), 1 + 4);
}

#[test]
fn test_montecarlo_single_replication_and_errors() {
    let tmp = TempDir::new().unwrap();
    let one = tmp.path().join("one");
    let mut args = vec!["--dgp", "2", "--reps", "1", "--seed", "3"];
    args.extend(SMALL);
    let run = montecarlo(&one, &args);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let table = read(&one, "table.csv");
    assert!(table.contains("\nsimple average,"));
    assert!(table.contains("\nbest <=3-average,"));

    assert_eq!(code(&montecarlo(&one, &["--dgp", "3", "--seed", "1"])), 2);
    assert_eq!(code(&montecarlo(&one, &["--dgp", "1"])), 2);
    assert_eq!(code(&montecarlo(&one, &["--dgp", "1", "--seed", "1", "--reps", "0"])), 2);
}

fn row_score(table: &str, method: &str) -> f64 {
    let line = table
        .lines()
        .find(|l| l.starts_with(&format!("{method},")))
        .unwrap_or_else(|| panic!("no {method} row"));
    line.split(',').nth(2).unwrap().parse().unwrap()
}

#[test]
fn test_montecarlo_dgp2_simplex_beats_average() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("mc");
    let run = montecarlo(
        &out,
        &["--dgp", "2", "--reps", "500", "--seed", "7", "--ridge-grid", "1", "--entropy-grid", "1", "--best-n", "1", "--best-le-n", "1"],
    );
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let table = read(&out, "table.csv");
    assert!(row_score(&table, "simplex") > row_score(&table, "simple average"));
}

fn pit(panel: &Path, real: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["pit", "--panel", s(panel), "--realizations", s(real), "--out-dir", s(out)];
    args.extend_from_slice(extra);
    regmix(&args)
}

fn masses(text: &str) -> Vec<f64> {
    text.lines().skip(1).map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect()
}

#[test]
fn test_pit_split_and_mirror() {
    let tmp = TempDir::new().unwrap();
    let panel = ingest(tmp.path());
    let real = fixture("realizations.csv");

    let last = tmp.path().join("last");
    let run = pit(&panel, &real, &last, &["--method", "simple-average", "--split", "2019-Q3"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(read(&last, "pit_first.csv").lines().count(), 11);
    assert_eq!(read(&last, "pit_second.csv"), "subsample,bin,lower,upper,mass,band_lower,band_upper,inside\n");

    let inflation = tmp.path().join("inflation");
    let real_rate = tmp.path().join("real-rate");
    let base = ["--method", "simplex", "--split", "2007-Q4"];
    assert_eq!(code(&pit(&panel, &real, &inflation, &base)), 0);
    let mut mirrored = base.to_vec();
    mirrored.extend(["--real-rate", "--nominal-rate", "3.25"]);
    assert_eq!(code(&pit(&panel, &real, &real_rate, &mirrored)), 0);
    for f in ["pit_first.csv", "pit_second.csv"] {
        let a = masses(&read(&inflation, f));
        let mut b = masses(&read(&real_rate, f));
        b.reverse();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{f}: {a:?} vs {b:?}");
        }
    }

    let out = tmp.path().join("bad");
    assert_eq!(code(&pit(&panel, &real, &out, &["--method", "simplex", "--split", "1998-Q4"])), 2);
    assert_eq!(code(&pit(&panel, &real, &out, &["--method", "simplex", "--split", "2007Q4"])), 2);
    assert_eq!(code(&pit(&panel, &real, &out, &["--method", "simplex", "--split", "2007-Q4", "--randomized"])), 2);
}

#[test]
fn test_pit_calibrated_panel_mostly_inside_bands() {
    // two identical forecasters whose histograms are the true distribution
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let edges = [f64::NEG_INFINITY, 0.0, 1.0, 2.0, 3.0, f64::INFINITY];
    let rounds = 400;
    let mut rows = String::from("survey_date,forecaster_id,bin_lower,bin_upper,probability\n");
    let mut reals = String::from("survey_date,realized_value\n");
    for t in 0..rounds {
        let date = format!("{}-Q{}", 1900 + t / 4, t % 4 + 1);
        let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        for id in ["a", "b"] {
            for m in 0..5 {
                rows.push_str(&format!("{date},{id},{},{},{}\n", edges[m], edges[m + 1], probs[m]));
            }
        }
        let u: f64 = rng.random();
        let mut m = 0;
        let mut cdf = probs[0];
        while u > cdf && m < 4 {
            m += 1;
            cdf += probs[m];
        }
        reals.push_str(&format!("{date},{}\n", m as f64 - 0.5));
    }
    let tmp = TempDir::new().unwrap();
    let panel = tmp.path().join("panel.csv");
    let real = tmp.path().join("real.csv");
    fs::write(&panel, rows).unwrap();
    fs::write(&real, reals).unwrap();
    let out = tmp.path().join("pit");
    let run = pit(&panel, &real, &out, &["--method", "simple-average", "--split", "1949-Q4", "--burn-in", "1"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for f in ["pit_first.csv", "pit_second.csv"] {
        let inside = read(&out, f).lines().skip(1).filter(|l| l.ends_with(",true")).count();
        assert!(inside >= 8, "{f}: {inside} of 10 bins inside");
    }
}
