//! CSV writers for backtest, PIT and Monte Carlo results.
//!
//! Score columns are losses (smaller is better) except
//! `log_predictive_density`, which is the negated log score.

use std::io::Write;

use crate::error::Result;
use crate::evaluation::{BacktestReport, PitResult};
use crate::montecarlo::ExperimentResult;
use crate::scoring::{Score, ScoreRule};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn score_cell(s: &Score) -> String {
    match s {
        Score::Finite(v) => v.to_string(),
        Score::Overflow => "inf".into(),
    }
}

/// One row per method and evaluation round.
pub fn write_backtest_scores<W: Write>(reports: &[BacktestReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "survey_date",
        "realization",
        "selected",
        "converged",
        "log_predictive_density",
        "log_score",
        "brier_score",
        "quadratic_score",
        "ranked_score",
    ])?;
    for r in reports {
        let method = r.method.to_string();
        let rules: Vec<ScoreRule> = r.reports.iter().map(|x| x.rule).collect();
        for round in &r.rounds {
            let by_rule = |rule: ScoreRule| rules.iter().position(|x| *x == rule).map(|i| round.scores[i]);
            let log = by_rule(ScoreRule::Log);
            let lpd = match log {
                Some(Score::Finite(v)) => (-v).to_string(),
                Some(Score::Overflow) => "-inf".into(),
                None => String::new(),
            };
            let cell = |rule| by_rule(rule).as_ref().map_or_else(String::new, score_cell);
            w.write_record([
                method.clone(),
                round.date.to_string(),
                round.realization.to_string(),
                round.weights.selected_count().to_string(),
                round.converged.to_string(),
                lpd,
                cell(ScoreRule::Log),
                cell(ScoreRule::Brier),
                cell(ScoreRule::Quadratic),
                cell(ScoreRule::Ranked),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format: one row per method, round and forecaster.
pub fn write_backtest_weights<W: Write>(reports: &[BacktestReport], forecaster_ids: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "survey_date", "forecaster_id", "weight"])?;
    for r in reports {
        let method = r.method.to_string();
        for round in &r.rounds {
            let date = round.date.to_string();
            for (id, weight) in forecaster_ids.iter().zip(round.weights.weights()) {
                w.write_record([method.as_str(), date.as_str(), id.as_str(), &weight.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Combined histograms, one row per method, round and bin.
pub fn write_backtest_mixtures<W: Write>(reports: &[BacktestReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "survey_date", "bin_lower", "bin_upper", "probability"])?;
    for r in reports {
        let method = r.method.to_string();
        for round in &r.rounds {
            let date = round.date.to_string();
            let grid = round.mixture.grid();
            for (m, p) in round.mixture.probs().iter().enumerate() {
                let (lo, hi) = grid.bin(m);
                w.write_record([method.clone(), date.clone(), lo.to_string(), hi.to_string(), p.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per method with mean scores over the evaluation rounds.
pub fn write_backtest_summary<W: Write>(reports: &[BacktestReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "rounds",
        "mean_log_predictive_density",
        "mean_log_score",
        "mean_brier_score",
        "mean_quadratic_score",
        "mean_ranked_score",
        "mean_selected",
    ])?;
    for r in reports {
        let mean = |rule| r.report(rule).and_then(|x| x.mean());
        w.write_record([
            r.method.to_string(),
            r.rounds.len().to_string(),
            opt(r.mean_log_predictive),
            opt(mean(ScoreRule::Log)),
            opt(mean(ScoreRule::Brier)),
            opt(mean(ScoreRule::Quadratic)),
            opt(mean(ScoreRule::Ranked)),
            r.mean_selected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// PIT histogram with its binomial bands.
pub fn write_pit<W: Write>(results: &[PitResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subsample", "bin", "lower", "upper", "mass", "band_lower", "band_upper", "inside"])?;
    for r in results {
        let j = r.masses.len();
        let label = r.subsample.clone().unwrap_or_else(|| "full".into());
        for (i, (mass, (lo, hi))) in r.masses.iter().zip(&r.bands).enumerate() {
            w.write_record([
                label.clone(),
                (i + 1).to_string(),
                (i as f64 / j as f64).to_string(),
                ((i + 1) as f64 / j as f64).to_string(),
                mass.to_string(),
                lo.to_string(),
                hi.to_string(),
                (mass >= lo && mass <= hi).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Results table: mean log score (larger is better) per method.
pub fn write_experiment_table<W: Write>(result: &ExperimentResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "lambda", "mean_log_score", "mean_selected"])?;
    for row in &result.rows {
        w.write_record([row.method.clone(), opt(row.lambda), row.mean_score.to_string(), opt(row.mean_selected)])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean score and selection count at every grid point.
pub fn write_experiment_curves<W: Write>(result: &ExperimentResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["penalty", "lambda", "mean_log_score", "mean_selected"])?;
    for c in &result.curves {
        w.write_record([c.kind.to_string(), c.lambda.to_string(), c.mean_score.to_string(), c.mean_selected.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
