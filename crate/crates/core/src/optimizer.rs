//! Simplex-constrained estimation of mixture weights under the log score,
//! with an optional divergence penalty.
//!
//! The solver is projected gradient descent: a Barzilai-Borwein trial step,
//! Euclidean projection onto the simplex, and Armijo backtracking. Every
//! accepted step lowers the objective, and the run is fully deterministic.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::forecast::{CombinationMethod, ForecastPanel, MixtureWeights};
use crate::penalty::{add_penalty_gradient, penalty_value, PenaltySpec};

/// Predictive densities evaluated at the realizations: entry `(t, k)` is
/// `f_{k,t}(y_t)`. For histograms this is the probability of the realized bin.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DensityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("density value {v} is not finite and nonnegative")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension { expected: cols, got: bad.len() });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Realized-bin probabilities of every forecaster over the given rounds.
    pub fn from_panel(panel: &ForecastPanel, rounds: Range<usize>) -> Result<Self> {
        let k = panel.num_forecasters();
        let mut data = Vec::with_capacity(rounds.len() * k);
        for t in rounds.clone() {
            let bin = panel.grid().locate(panel.realization(t)?)?;
            for j in 0..k {
                data.push(panel.require(t, j)?.probs()[bin]);
            }
        }
        Self::new(rounds.len(), k, data)
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.data[t * self.cols + k]
    }

    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for t in 0..self.rows {
            let row = self.row(t);
            data.extend(columns.iter().map(|&c| row[c]));
        }
        Self {
            rows: self.rows,
            cols: columns.len(),
            data,
        }
    }

    /// `-sum_t log(w . f_t)`; `+inf` when some mixture density is zero.
    pub fn log_score_objective(&self, weights: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.rows {
            let m: f64 = self.row(t).iter().zip(weights).map(|(f, w)| f * w).sum();
            if !(m > 0.0) {
                return f64::INFINITY;
            }
            total -= m.ln();
        }
        total
    }

    /// Gradient of [`log_score_objective`](Self::log_score_objective): `-sum_t f_t / (w . f_t)`.
    pub fn log_score_gradient(&self, weights: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.cols];
        for t in 0..self.rows {
            let row = self.row(t);
            let m: f64 = row.iter().zip(weights).map(|(f, w)| f * w).sum();
            for (g, f) in grad.iter_mut().zip(row) {
                *g -= f / m;
            }
        }
        grad
    }

    fn check_feasible(&self) -> Result<()> {
        for t in 0..self.rows {
            if !self.row(t).iter().any(|v| *v > 0.0) {
                return Err(Error::Infeasible { row: t });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the relative objective change of an accepted step falls below this.
    pub objective_tolerance: f64,
    /// Lower bound on every weight for entropy and Renyi penalties.
    pub weight_floor: f64,
    pub line_search_shrink: f64,
    pub initial_weights: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            objective_tolerance: 1e-10,
            weight_floor: 1e-12,
            line_search_shrink: 0.5,
            initial_weights: None,
        }
    }
}

impl SolverConfig {
    fn validate(&self, k: usize) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.objective_tolerance > 0.0) {
            return Err(Error::Config("objective_tolerance must be > 0".into()));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor < 1.0 / k as f64) {
            return Err(Error::Config(format!("weight_floor must lie in (0, 1/K), got {}", self.weight_floor)));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::Config("line_search_shrink must lie in (0, 1)".into()));
        }
        if let Some(w) = &self.initial_weights {
            if w.len() != k {
                return Err(Error::Dimension { expected: k, got: w.len() });
            }
        }
        Ok(())
    }
}

/// Solver output: the weights plus diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub weights: MixtureWeights,
    /// Log-score objective plus penalty at the returned weights.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial point.
    pub objective_trace: Vec<f64>,
}

/// Euclidean projection onto the probability simplex.
pub fn simplex_project(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("cannot project non-finite value {x}")));
    }
    Ok(project_onto_scaled_simplex(v, 1.0))
}

/// Projection onto `{w >= 0, sum w = total}` by the sort-and-threshold rule.
fn project_onto_scaled_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - total) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

struct Problem<'a> {
    densities: &'a DensityMatrix,
    penalty: Option<&'a PenaltySpec>,
    floor: Option<f64>,
}

impl Problem<'_> {
    fn objective(&self, w: &[f64]) -> f64 {
        let base = self.densities.log_score_objective(w);
        match self.penalty {
            None => base,
            Some(p) => match penalty_value(p, w) {
                Ok(v) => base + v,
                Err(_) => f64::INFINITY,
            },
        }
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.densities.log_score_gradient(w);
        if let Some(p) = self.penalty {
            add_penalty_gradient(p, w, &mut g)?;
        }
        Ok(g)
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        match self.floor {
            None => project_onto_scaled_simplex(v, 1.0),
            Some(floor) => {
                // {w >= floor, sum w = 1} is a shifted, shrunk simplex
                let k = v.len() as f64;
                let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
                project_onto_scaled_simplex(&shifted, 1.0 - k * floor)
                    .into_iter()
                    .map(|u| u + floor)
                    .collect()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;
const MAX_STEP: f64 = 1e20;

/// Minimizes `-sum_t log(w . f_t) + lambda D(w, 1/K)` over the simplex.
///
/// A zero-strength penalty of any kind is treated as no penalty, so it
/// reproduces the unpenalized estimate exactly.
pub fn estimate_weights(densities: &DensityMatrix, penalty: &PenaltySpec, config: &SolverConfig) -> Result<Estimate> {
    let k = densities.num_cols();
    if densities.num_rows() < 1 {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    if k < 2 {
        return Err(Error::Dimension { expected: 2, got: k });
    }
    config.validate(k)?;
    densities.check_feasible()?;

    let active = !penalty.is_inactive();
    let problem = Problem {
        densities,
        penalty: active.then_some(penalty),
        floor: (active && penalty.requires_interior()).then_some(config.weight_floor),
    };

    let mut x = match &config.initial_weights {
        Some(w) => problem.project(w),
        None => vec![1.0 / k as f64; k],
    };
    let mut f = problem.objective(&x);
    if !f.is_finite() {
        // an infeasible warm start falls back to equal weights
        x = vec![1.0 / k as f64; k];
        f = problem.objective(&x);
    }
    let mut g = problem.gradient(&x)?;
    let mut trace = vec![f];

    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut step = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let mut trial_step = step;
        let accepted = loop {
            let candidate: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - trial_step * gi).collect();
            let x_new = problem.project(&candidate);
            let d: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            if d.iter().all(|v| *v == 0.0) {
                break None;
            }
            let f_new = problem.objective(&x_new);
            if f_new.is_finite() && f_new <= f + ARMIJO_C * dot(&g, &d) && f_new <= f {
                break Some((x_new, f_new, trial_step));
            }
            trial_step *= config.line_search_shrink;
            if trial_step < MIN_STEP {
                break None;
            }
        };
        let Some((x_new, f_new, used_step)) = accepted else {
            // no first-order progress is possible at working precision
            converged = true;
            break;
        };
        let g_new = problem.gradient(&x_new)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        step = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(MIN_STEP, MAX_STEP)
        } else {
            (used_step * 2.0).min(MAX_STEP)
        };
        let change = (f - f_new) / f.abs().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if change < config.objective_tolerance {
            converged = true;
            break;
        }
    }

    let weights = MixtureWeights::new(x, CombinationMethod::Simplex, *penalty)?;
    Ok(Estimate {
        weights,
        objective: f,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Largest K for which [`partially_egalitarian_ridge`] enumerates subsets.
pub const PEG_MAX_FORECASTERS: usize = 12;

/// Result of the partially egalitarian ridge enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct PegEstimate {
    pub weights: MixtureWeights,
    /// Sorted indices of the winning subset.
    pub members: Vec<usize>,
    pub objective: f64,
}

/// Solves the simplex+ridge problem on every nonempty subset of forecasters,
/// with the ridge centered at `1/size` on the subset, and keeps the best.
///
/// Subsets are visited by size, then lexicographically; the first of several
/// exactly tied subsets wins.
pub fn partially_egalitarian_ridge(densities: &DensityMatrix, lambda: f64, config: &SolverConfig) -> Result<PegEstimate> {
    let k = densities.num_cols();
    if k > PEG_MAX_FORECASTERS {
        return Err(Error::EnumerationTooLarge {
            k,
            limit: PEG_MAX_FORECASTERS,
        });
    }
    if k < 1 || densities.num_rows() < 1 {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    densities.check_feasible()?;
    let spec = PenaltySpec::ridge(lambda)?;

    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for size in 1..=k {
        for members in crate::subset::Combinations::new(k, size) {
            let sub = densities.select_columns(&members);
            let (objective, sub_weights) = if size == 1 {
                (sub.log_score_objective(&[1.0]), vec![1.0])
            } else {
                if sub.check_feasible().is_err() {
                    continue;
                }
                let est = estimate_weights(&sub, &spec, config)?;
                (est.objective, est.weights.weights().to_vec())
            };
            if !objective.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _, _)| objective < *b) {
                best = Some((objective, members, sub_weights));
            }
        }
    }
    let (objective, members, sub_weights) = best.ok_or(Error::Infeasible { row: 0 })?;
    let mut full = vec![0.0; k];
    for (m, w) in members.iter().zip(&sub_weights) {
        full[*m] = *w;
    }
    let weights = MixtureWeights::new(full, CombinationMethod::PartiallyEgalitarianRidge, spec)?;
    Ok(PegEstimate {
        weights,
        members,
        objective,
    })
}
