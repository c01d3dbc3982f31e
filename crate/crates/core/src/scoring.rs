//! Proper scoring rules. Every rule is a loss: smaller is better.
//!
//! The log rule additionally reports the mean log predictive density
//! (`-total / T`, larger is better), which is how tables of results are
//! usually printed.

use std::fmt;
use std::ops::Add;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{mix_probabilities, ForecastPanel, GaussianForecast, HistogramForecast, MixtureWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreRule {
    Log,
    Brier,
    Quadratic,
    Ranked,
}

impl ScoreRule {
    pub const ALL: [ScoreRule; 4] = [
        ScoreRule::Log,
        ScoreRule::Brier,
        ScoreRule::Quadratic,
        ScoreRule::Ranked,
    ];
}

impl fmt::Display for ScoreRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScoreRule::Log => "log",
            ScoreRule::Brier => "brier",
            ScoreRule::Quadratic => "quadratic",
            ScoreRule::Ranked => "ranked",
        };
        f.write_str(s)
    }
}

impl FromStr for ScoreRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(ScoreRule::Log),
            "brier" => Ok(ScoreRule::Brier),
            "quadratic" => Ok(ScoreRule::Quadratic),
            "ranked" => Ok(ScoreRule::Ranked),
            other => Err(Error::Config(format!("unknown scoring rule {other:?}"))),
        }
    }
}

/// A score value. `Overflow` stands for an infinite log score and absorbs
/// anything added to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    Finite(f64),
    Overflow,
}

impl Score {
    pub fn value(&self) -> Option<f64> {
        match self {
            Score::Finite(v) => Some(*v),
            Score::Overflow => None,
        }
    }

    pub fn is_overflow(&self) -> bool {
        matches!(self, Score::Overflow)
    }
}

impl Add for Score {
    type Output = Score;

    fn add(self, rhs: Score) -> Score {
        match (self, rhs) {
            (Score::Finite(a), Score::Finite(b)) => Score::Finite(a + b),
            _ => Score::Overflow,
        }
    }
}

impl std::iter::Sum for Score {
    fn sum<I: Iterator<Item = Score>>(iter: I) -> Score {
        iter.fold(Score::Finite(0.0), |a, b| a + b)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Finite(v) => write!(f, "{v}"),
            Score::Overflow => f.write_str("overflow"),
        }
    }
}

/// Scores of one forecast sequence over T periods.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub rule: ScoreRule,
    pub per_period: Vec<Score>,
    pub total: Score,
    /// `-total / T` for the log rule; `None` for other rules or on overflow.
    pub mean_log_predictive: Option<f64>,
}

impl ScoreReport {
    pub fn from_periods(rule: ScoreRule, per_period: Vec<Score>) -> Self {
        let total: Score = per_period.iter().copied().sum();
        let mean_log_predictive = match (rule, total) {
            (ScoreRule::Log, Score::Finite(v)) if !per_period.is_empty() => {
                Some(-v / per_period.len() as f64)
            }
            _ => None,
        };
        Self {
            rule,
            per_period,
            total,
            mean_log_predictive,
        }
    }

    /// Mean loss per period.
    pub fn mean(&self) -> Option<f64> {
        self.total.value().map(|v| v / self.per_period.len() as f64)
    }
}

pub(crate) fn log_score_at(probs: &[f64], bin: usize) -> Result<f64> {
    let p = probs[bin];
    if p > 0.0 {
        Ok(-p.ln())
    } else {
        Err(Error::InfiniteScore { bin })
    }
}

pub(crate) fn brier_score_at(probs: &[f64], bin: usize) -> f64 {
    let m = probs.len() as f64;
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let hit = if i == bin { 1.0 } else { 0.0 };
            (p - hit) * (p - hit)
        })
        .sum::<f64>()
        / m
}

pub(crate) fn quadratic_score_at(probs: &[f64], bin: usize) -> f64 {
    let sq: f64 = probs.iter().map(|p| p * p).sum();
    -2.0 * probs[bin] + sq
}

pub(crate) fn ranked_score_at(probs: &[f64], bin: usize) -> f64 {
    let mut cdf = 0.0;
    let mut total = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cdf += p;
        let step = if i >= bin { 1.0 } else { 0.0 };
        total += (cdf - step) * (cdf - step);
    }
    total
}

pub(crate) fn score_at(rule: ScoreRule, probs: &[f64], bin: usize) -> Score {
    match rule {
        ScoreRule::Log => log_score_at(probs, bin).map_or(Score::Overflow, Score::Finite),
        ScoreRule::Brier => Score::Finite(brier_score_at(probs, bin)),
        ScoreRule::Quadratic => Score::Finite(quadratic_score_at(probs, bin)),
        ScoreRule::Ranked => Score::Finite(ranked_score_at(probs, bin)),
    }
}

/// `-log p_m` at the realized bin.
pub fn log_score(f: &HistogramForecast, y: f64) -> Result<f64> {
    let (m, _) = f.bin_probability(y)?;
    log_score_at(f.probs(), m)
}

/// `(1/M) sum_m (p_m - 1(y in b_m))^2`.
pub fn brier_score(f: &HistogramForecast, y: f64) -> Result<f64> {
    let (m, _) = f.bin_probability(y)?;
    Ok(brier_score_at(f.probs(), m))
}

/// `-2 p_m + sum p^2`; equals `M * brier - 1`.
pub fn quadratic_score(f: &HistogramForecast, y: f64) -> Result<f64> {
    let (m, _) = f.bin_probability(y)?;
    Ok(quadratic_score_at(f.probs(), m))
}

/// `sum_m (P_m - 1(y <= b_m+))^2` over the forecast cdf.
pub fn ranked_score(f: &HistogramForecast, y: f64) -> Result<f64> {
    let (m, _) = f.bin_probability(y)?;
    Ok(ranked_score_at(f.probs(), m))
}

pub fn score(rule: ScoreRule, f: &HistogramForecast, y: f64) -> Result<Score> {
    let (m, _) = f.bin_probability(y)?;
    Ok(score_at(rule, f.probs(), m))
}

/// `-log` of the Gaussian density at `y`.
pub fn gaussian_log_score(f: &GaussianForecast, y: f64) -> f64 {
    -f.log_density(y)
}

/// What [`panel_score`] scores.
#[derive(Clone, Copy, Debug)]
pub enum ScoreTarget<'a> {
    Forecaster(usize),
    Mixture(&'a MixtureWeights),
}

/// Sum of per-period scores of one forecaster, or of a fixed mixture, over every round of the panel.
pub fn panel_score(panel: &ForecastPanel, target: ScoreTarget<'_>, rule: ScoreRule) -> Result<ScoreReport> {
    let k = panel.num_forecasters();
    if let ScoreTarget::Mixture(w) = target {
        if w.len() != k {
            return Err(Error::Dimension { expected: k, got: w.len() });
        }
    }
    let mut per_period = Vec::with_capacity(panel.num_rounds());
    for t in 0..panel.num_rounds() {
        let y = panel.realization(t)?;
        let bin = panel.grid().locate(y)?;
        let score = match target {
            ScoreTarget::Forecaster(j) => {
                let f = panel.require(t, j)?;
                score_at(rule, f.probs(), bin)
            }
            ScoreTarget::Mixture(w) => {
                let mut rows = Vec::with_capacity(k);
                for (j, wj) in w.weights().iter().enumerate() {
                    // zero-weight members may be missing
                    match panel.cell(t, j) {
                        Some(p) => rows.push(p),
                        None if *wj == 0.0 => rows.push(&[][..]),
                        None => {
                            return Err(Error::MissingCell {
                                forecaster: panel.forecaster_ids()[j].clone(),
                                date: panel.dates()[t].to_string(),
                            })
                        }
                    }
                }
                let m = panel.grid().num_bins();
                let probs = mix_probabilities_sparse(w.weights(), &rows, m);
                score_at(rule, &probs, bin)
            }
        };
        per_period.push(score);
    }
    Ok(ScoreReport::from_periods(rule, per_period))
}

fn mix_probabilities_sparse(weights: &[f64], rows: &[&[f64]], bins: usize) -> Vec<f64> {
    if rows.iter().all(|r| r.len() == bins) {
        return mix_probabilities(weights, rows);
    }
    let mut out = vec![0.0; bins];
    for (w, row) in weights.iter().zip(rows) {
        if *w == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(row.iter()) {
            *o += w * p;
        }
    }
    out
}
