#![allow(dead_code)]

pub mod synthetic;

use std::fs::{self, File};
use std::path::PathBuf;
use std::sync::Arc;

use regmix::evaluation::{backtest_pit_segments, pit_histogram, rolling_backtest, BacktestConfig, BacktestReport, Method};
use regmix::ingest::{run_pipeline, write_panel, IngestConfig, RawSurveyTable, RealizationTable, UNIFORM_ID};
use regmix::penalty::PenaltySpec;
use regmix::report;
use regmix::BinGrid;

pub struct Summary {
    pub passed: bool,
    pub detail: String,
}

pub const WINDOW: usize = 20;
pub const BURN_IN: usize = 8;
pub const TOLERANCE: f64 = 0.05;

pub const RIDGE_GRID: [f64; 10] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0];
pub const ENTROPY_GRID: [f64; 12] = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0];

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn mlpd(r: &BacktestReport) -> f64 {
    r.mean_log_predictive.unwrap_or(f64::NEG_INFINITY)
}

/// Best report over a penalty grid, chosen after the fact; ties go to the
/// first grid value.
fn best_over_grid(
    panel: &regmix::ForecastPanel,
    specs: impl Iterator<Item = PenaltySpec>,
) -> Result<BacktestReport, String> {
    let mut best: Option<BacktestReport> = None;
    for spec in specs {
        let r = rolling_backtest(panel, &BacktestConfig::new(Method::Simplex(spec), WINDOW, BURN_IN)).map_err(err)?;
        if best.as_ref().is_none_or(|b| mlpd(&r) > mlpd(b)) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| "empty grid".into())
}

/// Ingests the shipped fixture, runs the five combination methods and the
/// simple average, writes every output file, and compares mean log
/// predictive densities.
pub fn run_survey_fixture() -> Result<Summary, String> {
    let dir = fixture_dir();
    let raw = RawSurveyTable::from_reader(File::open(dir.join("survey.csv")).map_err(err)?).map_err(err)?;
    let real = RealizationTable::from_reader(File::open(dir.join("realizations.csv")).map_err(err)?).map_err(err)?;
    let (panel, log) = run_pipeline(&raw, &real, Arc::new(BinGrid::inflation_standard()), &IngestConfig::default())
        .map_err(err)?;
    if panel.num_forecasters() != synthetic::KEPT + 1 || panel.num_rounds() != synthetic::ROUNDS || !panel.is_complete() {
        return Err(format!(
            "ingested panel is {} x {} (complete: {})",
            panel.num_forecasters(),
            panel.num_rounds(),
            panel.is_complete()
        ));
    }
    let real_ids: Vec<usize> = (0..panel.num_forecasters())
        .filter(|k| panel.forecaster_ids()[*k] != UNIFORM_ID)
        .collect();
    let without_uniform = panel.select_forecasters(&real_ids).map_err(err)?;

    let run = |p: &regmix::ForecastPanel, m: Method| rolling_backtest(p, &BacktestConfig::new(m, WINDOW, BURN_IN)).map_err(err);
    let average = run(&without_uniform, Method::SimpleAverage)?;
    let simplex = run(&panel, Method::Simplex(PenaltySpec::none()))?;
    let ridge = best_over_grid(&panel, RIDGE_GRID.iter().map(|l| PenaltySpec::ridge(*l).unwrap()))?;
    let entropy = best_over_grid(&panel, ENTROPY_GRID.iter().map(|l| PenaltySpec::entropy(*l).unwrap()))?;
    let best4 = run(&panel, Method::BestN(4))?;
    let best_le4 = run(&panel, Method::BestLeN(4))?;
    let methods = [simplex, ridge, entropy, best4, best_le4];

    let out = std::env::temp_dir().join(format!("regmix-acceptance-{}", std::process::id()));
    fs::create_dir_all(&out).map_err(err)?;
    let mut all = vec![average.clone()];
    all.extend(methods.iter().cloned());
    write_panel(&panel, File::create(out.join("panel.csv")).map_err(err)?).map_err(err)?;
    fs::write(out.join("ingest.log"), log.to_string()).map_err(err)?;
    report::write_backtest_summary(&all, File::create(out.join("summary.csv")).map_err(err)?).map_err(err)?;
    report::write_backtest_scores(&all, File::create(out.join("scores.csv")).map_err(err)?).map_err(err)?;
    report::write_backtest_mixtures(&all, File::create(out.join("mixtures.csv")).map_err(err)?).map_err(err)?;
    report::write_backtest_weights(&methods, panel.forecaster_ids(), File::create(out.join("weights.csv")).map_err(err)?)
        .map_err(err)?;
    let pit = pit_histogram(&backtest_pit_segments(&methods[0]).map_err(err)?, 10, 0.9).map_err(err)?;
    report::write_pit(&[pit], File::create(out.join("pit.csv")).map_err(err)?).map_err(err)?;
    let summary_rows = fs::read_to_string(out.join("summary.csv")).map_err(err)?.lines().count();
    fs::remove_dir_all(&out).map_err(err)?;
    if summary_rows != all.len() + 1 {
        return Err(format!("summary.csv has {summary_rows} lines"));
    }

    let base = mlpd(&average);
    let mut failures = Vec::new();
    let mut parts = vec![format!("simple average {base:.4}")];
    for r in &methods {
        parts.push(format!("{} {:.4}", r.method, mlpd(r)));
        if mlpd(r) < base - TOLERANCE {
            failures.push(format!("{} below simple average", r.method));
        }
    }
    let gap = (mlpd(&methods[0]) - mlpd(&methods[4])).abs();
    if !(gap <= TOLERANCE) {
        failures.push(format!("simplex vs best <=4 gap {gap:.4}"));
    }
    parts.push(format!("simplex/best<=4 gap {gap:.4}"));
    if !failures.is_empty() {
        parts.push(format!("failed: {}", failures.join("; ")));
    }
    Ok(Summary {
        passed: failures.is_empty(),
        detail: parts.join(", "),
    })
}
