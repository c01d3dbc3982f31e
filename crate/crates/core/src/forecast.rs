//! Value types for predictive densities: bin grids, histogram and Gaussian
//! forecasts, forecast panels and mixture weights.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::PenaltySpec;

/// Absolute tolerance on the sum-to-one constraint of probability vectors.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A weight counts as "selected" when it exceeds this value.
pub const SELECTION_THRESHOLD: f64 = 1e-4;

/// Which end of each bin interval is closed.
///
/// Survey bins are written `(a, b]`, so `Right` is the default. The real-rate
/// reflection turns right-closed bins into left-closed ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Closed {
    Right,
    Left,
}

/// Ordered bin boundaries. The outermost edges may be infinite; when finite
/// they are included in the support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    edges: Vec<f64>,
    closed: Closed,
}

impl BinGrid {
    /// Right-closed grid from `M + 1` strictly increasing edges.
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        Self::with_closed(edges, Closed::Right)
    }

    pub fn with_closed(edges: Vec<f64>, closed: Closed) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 bins, got {} edges",
                edges.len()
            )));
        }
        if edges.iter().any(|e| e.is_nan()) {
            return Err(Error::InvalidGrid("NaN edge".into()));
        }
        if edges[1..edges.len() - 1].iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidGrid("interior edges must be finite".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("edges must be strictly increasing".into()));
        }
        Ok(Self { edges, closed })
    }

    /// The fixed 11-bin inflation grid `(-inf, -0.5], (-0.5, 0], ..., (3.5, 4], (4, inf)`.
    pub fn inflation_standard() -> Self {
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend((0..10).map(|i| -0.5 + 0.5 * i as f64));
        edges.push(f64::INFINITY);
        Self::new(edges).expect("static grid is valid")
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn closed(&self) -> Closed {
        self.closed
    }

    pub fn num_bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// `(lower, upper)` edges of bin `m` (0-based).
    pub fn bin(&self, m: usize) -> (f64, f64) {
        (self.edges[m], self.edges[m + 1])
    }

    /// 0-based index of the bin containing `y`.
    pub fn locate(&self, y: f64) -> Result<usize> {
        let m = self.num_bins();
        if y.is_nan() || y < self.edges[0] || y > self.edges[m] || !y.is_finite() {
            return Err(Error::OutOfRange(y));
        }
        let interior = &self.edges[1..m];
        let idx = match self.closed {
            Closed::Right => interior.partition_point(|&e| e < y),
            Closed::Left => interior.partition_point(|&e| e <= y),
        };
        Ok(idx)
    }
}

/// A discrete predictive density over a bin grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramForecast {
    grid: Arc<BinGrid>,
    probs: Vec<f64>,
}

impl HistogramForecast {
    pub fn new(grid: Arc<BinGrid>, probs: Vec<f64>) -> Result<Self> {
        check_probabilities(&probs, grid.num_bins())?;
        Ok(Self { grid, probs })
    }

    pub fn uniform(grid: Arc<BinGrid>) -> Self {
        let m = grid.num_bins();
        Self {
            probs: vec![1.0 / m as f64; m],
            grid,
        }
    }

    pub fn grid(&self) -> &Arc<BinGrid> {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_bins(&self) -> usize {
        self.probs.len()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// `(m, p_m)` for the bin containing `y`.
    pub fn bin_probability(&self, y: f64) -> Result<(usize, f64)> {
        let m = self.grid.locate(y)?;
        Ok((m, self.probs[m]))
    }

    /// Cumulative probabilities `P_1, ..., P_M`.
    pub fn cdf(&self) -> Vec<f64> {
        forecast_cdf(&self.probs)
    }

    pub fn same_grid(&self, other: &HistogramForecast) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }
}

pub(crate) fn check_probabilities(probs: &[f64], bins: usize) -> Result<()> {
    if probs.len() != bins {
        return Err(Error::Dimension {
            expected: bins,
            got: probs.len(),
        });
    }
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::InvalidForecast(format!("bad probability {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidForecast(format!(
            "probabilities sum to {total}"
        )));
    }
    Ok(())
}

/// Running sum of bin probabilities.
pub fn forecast_cdf(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// Linear opinion pool `sum_k w_k p_k`.
pub fn mixture(weights: &MixtureWeights, forecasts: &[HistogramForecast]) -> Result<HistogramForecast> {
    let w = weights.weights();
    if w.len() != forecasts.len() {
        return Err(Error::Dimension {
            expected: forecasts.len(),
            got: w.len(),
        });
    }
    let first = forecasts.first().ok_or(Error::Dimension {
        expected: 1,
        got: 0,
    })?;
    if forecasts.iter().any(|f| !f.same_grid(first)) {
        return Err(Error::GridMismatch);
    }
    let rows: Vec<&[f64]> = forecasts.iter().map(|f| f.probs()).collect();
    let probs = mix_probabilities(w, &rows);
    HistogramForecast::new(Arc::clone(first.grid()), probs)
}

pub(crate) fn mix_probabilities(weights: &[f64], rows: &[&[f64]]) -> Vec<f64> {
    let m = rows[0].len();
    let mut out = vec![0.0; m];
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

/// Reflects an inflation forecast into a real-rate forecast `r = i - pi`.
///
/// Edges become `i - e` in reverse order, probabilities are reversed and the
/// closed end of each bin flips.
pub fn real_rate_transform(f: &HistogramForecast, nominal_rate: f64) -> Result<HistogramForecast> {
    if !nominal_rate.is_finite() {
        return Err(Error::Domain(format!("nominal rate {nominal_rate} is not finite")));
    }
    let edges: Vec<f64> = f.grid.edges().iter().rev().map(|e| nominal_rate - e).collect();
    let closed = match f.grid.closed() {
        Closed::Right => Closed::Left,
        Closed::Left => Closed::Right,
    };
    let grid = Arc::new(BinGrid::with_closed(edges, closed)?);
    let probs: Vec<f64> = f.probs.iter().rev().copied().collect();
    Ok(HistogramForecast { grid, probs })
}

/// A Gaussian predictive density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianForecast {
    mean: f64,
    variance: f64,
}

impl GaussianForecast {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) || !mean.is_finite() {
            return Err(Error::Domain(format!(
                "Gaussian forecast needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let d = y - self.mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.variance).ln() - d * d / (2.0 * self.variance)
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }
}

/// A quarterly survey date, written `YYYY-Qn`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SurveyQuarter {
    year: i32,
    quarter: u8,
}

impl SurveyQuarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(Error::Config(format!("quarter {quarter} not in 1..=4")));
        }
        Ok(Self { year, quarter })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn quarter(&self) -> u8 {
        self.quarter
    }

    pub fn next(&self) -> Self {
        if self.quarter == 4 {
            Self {
                year: self.year + 1,
                quarter: 1,
            }
        } else {
            Self {
                year: self.year,
                quarter: self.quarter + 1,
            }
        }
    }

    /// Consecutive quarters starting at `self`.
    pub fn range(&self, count: usize) -> Vec<Self> {
        std::iter::successors(Some(*self), |q| Some(q.next()))
            .take(count)
            .collect()
    }
}

impl fmt::Display for SurveyQuarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-Q{}", self.year, self.quarter)
    }
}

impl FromStr for SurveyQuarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad survey date {s:?}, expected YYYY-Qn"));
        let (year, q) = s.trim().split_once("-Q").ok_or_else(bad)?;
        let year: i32 = year.parse().map_err(|_| bad())?;
        let q: u8 = q.parse().map_err(|_| bad())?;
        Self::new(year, q).map_err(|_| bad())
    }
}

/// K forecasters by T survey rounds of optional histogram forecasts on a
/// shared grid, plus one optional realization per round.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastPanel {
    grid: Arc<BinGrid>,
    forecaster_ids: Vec<String>,
    dates: Vec<SurveyQuarter>,
    /// `cells[t][k]`
    cells: Vec<Vec<Option<Vec<f64>>>>,
    realizations: Vec<Option<f64>>,
}

impl ForecastPanel {
    pub fn new(
        grid: Arc<BinGrid>,
        forecaster_ids: Vec<String>,
        dates: Vec<SurveyQuarter>,
        cells: Vec<Vec<Option<Vec<f64>>>>,
        realizations: Vec<Option<f64>>,
    ) -> Result<Self> {
        let t = dates.len();
        let k = forecaster_ids.len();
        if cells.len() != t {
            return Err(Error::Dimension { expected: t, got: cells.len() });
        }
        if realizations.len() != t {
            return Err(Error::Dimension {
                expected: t,
                got: realizations.len(),
            });
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("survey dates must be strictly increasing".into()));
        }
        for row in &cells {
            if row.len() != k {
                return Err(Error::Dimension { expected: k, got: row.len() });
            }
            for p in row.iter().flatten() {
                check_probabilities(p, grid.num_bins())?;
            }
        }
        Ok(Self {
            grid,
            forecaster_ids,
            dates,
            cells,
            realizations,
        })
    }

    pub fn grid(&self) -> &Arc<BinGrid> {
        &self.grid
    }

    pub fn forecaster_ids(&self) -> &[String] {
        &self.forecaster_ids
    }

    pub fn dates(&self) -> &[SurveyQuarter] {
        &self.dates
    }

    pub fn realizations(&self) -> &[Option<f64>] {
        &self.realizations
    }

    pub fn num_rounds(&self) -> usize {
        self.dates.len()
    }

    pub fn num_forecasters(&self) -> usize {
        self.forecaster_ids.len()
    }

    pub fn cell(&self, t: usize, k: usize) -> Option<&[f64]> {
        self.cells[t][k].as_deref()
    }

    pub(crate) fn into_parts(
        self,
    ) -> (
        Arc<BinGrid>,
        Vec<String>,
        Vec<SurveyQuarter>,
        Vec<Vec<Option<Vec<f64>>>>,
        Vec<Option<f64>>,
    ) {
        (
            self.grid,
            self.forecaster_ids,
            self.dates,
            self.cells,
            self.realizations,
        )
    }

    pub fn forecast(&self, t: usize, k: usize) -> Option<HistogramForecast> {
        self.cell(t, k).map(|p| HistogramForecast {
            grid: Arc::clone(&self.grid),
            probs: p.to_vec(),
        })
    }

    /// Like [`forecast`](Self::forecast) but a missing cell is an error.
    pub fn require(&self, t: usize, k: usize) -> Result<HistogramForecast> {
        self.forecast(t, k).ok_or_else(|| Error::MissingCell {
            forecaster: self.forecaster_ids[k].clone(),
            date: self.dates[t].to_string(),
        })
    }

    pub fn realization(&self, t: usize) -> Result<f64> {
        self.realizations[t].ok_or_else(|| Error::MissingRealization(self.dates[t].to_string()))
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|row| row.iter().all(Option::is_some))
            && self.realizations.iter().all(Option::is_some)
    }

    pub fn index_of_date(&self, date: SurveyQuarter) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Panel restricted to the rounds in `range`.
    pub fn rounds(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            forecaster_ids: self.forecaster_ids.clone(),
            dates: self.dates[range.clone()].to_vec(),
            cells: self.cells[range.clone()].to_vec(),
            realizations: self.realizations[range].to_vec(),
        }
    }

    /// Panel restricted to the given forecaster columns, in the given order.
    pub fn select_forecasters(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.num_forecasters()) {
            return Err(Error::Dimension {
                expected: self.num_forecasters(),
                got: c,
            });
        }
        Ok(Self {
            grid: Arc::clone(&self.grid),
            forecaster_ids: columns.iter().map(|&c| self.forecaster_ids[c].clone()).collect(),
            dates: self.dates.clone(),
            cells: self
                .cells
                .iter()
                .map(|row| columns.iter().map(|&c| row[c].clone()).collect())
                .collect(),
            realizations: self.realizations.clone(),
        })
    }

    /// Appends the rounds of `other`, which must share forecasters and grid
    /// and start after this panel ends.
    pub fn concat(&self, other: &ForecastPanel) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.forecaster_ids != other.forecaster_ids {
            return Err(Error::Config("panels have different forecasters".into()));
        }
        let mut dates = self.dates.clone();
        dates.extend_from_slice(&other.dates);
        let mut cells = self.cells.clone();
        cells.extend_from_slice(&other.cells);
        let mut realizations = self.realizations.clone();
        realizations.extend_from_slice(&other.realizations);
        Self::new(
            Arc::clone(&self.grid),
            self.forecaster_ids.clone(),
            dates,
            cells,
            realizations,
        )
    }
}

/// How a set of mixture weights was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CombinationMethod {
    SimpleAverage,
    /// Simplex-constrained log-score estimate, optionally penalized.
    Simplex,
    BestN(usize),
    BestLeN(usize),
    PartiallyEgalitarianRidge,
    Individual(usize),
}

impl fmt::Display for CombinationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CombinationMethod::SimpleAverage => write!(f, "simple-average"),
            CombinationMethod::Simplex => write!(f, "simplex"),
            CombinationMethod::BestN(n) => write!(f, "best-{n}"),
            CombinationMethod::BestLeN(n) => write!(f, "best-le-{n}"),
            CombinationMethod::PartiallyEgalitarianRidge => write!(f, "peg-ridge"),
            CombinationMethod::Individual(k) => write!(f, "individual-{k}"),
        }
    }
}

/// A point on the K-simplex with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureWeights {
    weights: Vec<f64>,
    method: CombinationMethod,
    penalty: PenaltySpec,
    selected_count: usize,
}

impl MixtureWeights {
    pub fn new(weights: Vec<f64>, method: CombinationMethod, penalty: PenaltySpec) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Dimension { expected: 1, got: 0 });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Domain(format!("weights sum to {total}")));
        }
        let selected_count = weights.iter().filter(|w| **w > SELECTION_THRESHOLD).count();
        Ok(Self {
            weights,
            method,
            penalty,
            selected_count,
        })
    }

    pub fn equal(k: usize) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
            method: CombinationMethod::SimpleAverage,
            penalty: PenaltySpec::none(),
            selected_count: k,
        }
    }

    pub fn vertex(k: usize, index: usize) -> Self {
        let mut weights = vec![0.0; k];
        weights[index] = 1.0;
        Self {
            weights,
            method: CombinationMethod::Individual(index),
            penalty: PenaltySpec::none(),
            selected_count: 1,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn method(&self) -> &CombinationMethod {
        &self.method
    }

    pub fn penalty(&self) -> &PenaltySpec {
        &self.penalty
    }

    pub fn selected_count(&self) -> usize {
        self.selected_count
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
