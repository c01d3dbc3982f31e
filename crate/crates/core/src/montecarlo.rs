//! Seeded simulation of a noisy-signal forecasting environment and a
//! replication engine for comparing combination methods.
//!
//! The target is `y_t = x_t + sigma_y e_t` with an AR(1) state
//! `x_t = phi_x x_{t-1} + sigma_x v_t`. Forecaster k observes
//! `z_kt = x_t + sigma_zk eta_kt` and issues `N(phi_x z_kt, sigma_y^2)` for
//! `y_t`. Weights are estimated on rounds `1..=T` and the round `T+1`
//! mixture is scored at `y_{T+1}`.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forecast::{GaussianForecast, MixtureWeights};
use crate::optimizer::{estimate_weights, DensityMatrix, SolverConfig};
use crate::penalty::{log_sum_exp, PenaltyKind, PenaltySpec};
use crate::subset::best_by_size;

#[derive(Clone, Debug, PartialEq)]
pub struct DgpConfig {
    pub phi_x: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Signal noise of each forecaster; its length is K.
    pub sigma_z: Vec<f64>,
    /// Estimation rounds T.
    pub rounds: usize,
    pub seed: u64,
    pub replications: usize,
}

impl DgpConfig {
    pub fn num_forecasters(&self) -> usize {
        self.sigma_z.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi_x.abs() < 1.0) {
            return Err(Error::Config(format!("|phi_x| must be < 1, got {}", self.phi_x)));
        }
        if !(self.sigma_x > 0.0 && self.sigma_y > 0.0) {
            return Err(Error::Config("sigma_x and sigma_y must be > 0".into()));
        }
        // zero signal noise is allowed: the forecaster then sees x_t exactly
        if self.sigma_z.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("sigma_z must be finite and >= 0".into()));
        }
        if self.sigma_z.len() < 2 {
            return Err(Error::Config("need at least 2 forecasters".into()));
        }
        if self.rounds < 1 || self.replications < 1 {
            return Err(Error::Config("rounds and replications must be >= 1".into()));
        }
        Ok(())
    }

    /// Variance of the stationary distribution of x.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma_x * self.sigma_x / (1.0 - self.phi_x * self.phi_x)
    }
}

/// The two signal-noise designs: 1 = all forecasters equally noisy, 2 = the
/// first half precise (sigma_z = 1) and the second half noisy (sigma_z = 5).
pub fn dgp_preset(which: u8, k: usize) -> Result<DgpConfig> {
    let sigma_z = match which {
        1 => vec![1.0; k],
        2 if k % 2 == 0 => {
            let mut s = vec![1.0; k / 2];
            s.extend(vec![5.0; k / 2]);
            s
        }
        2 => return Err(Error::Config(format!("DGP 2 needs an even number of forecasters, got {k}"))),
        other => return Err(Error::Config(format!("unknown DGP preset {other}"))),
    };
    Ok(DgpConfig {
        phi_x: 0.9,
        sigma_x: 1.0,
        sigma_y: 0.5,
        sigma_z,
        rounds: 20,
        seed: 0,
        replications: 500,
    })
}

/// Penalty strengths to sweep for one penalty kind.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaGrid {
    pub kind: PenaltyKind,
    pub alpha: Option<f64>,
    values: Vec<f64>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

impl LambdaGrid {
    pub fn new(kind: PenaltyKind, alpha: Option<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("lambda grid values must be finite and >= 0".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("lambda grid must be strictly increasing".into()));
        }
        PenaltySpec::new(kind, 0.0, alpha)?;
        Ok(Self { kind, alpha, values })
    }

    /// 10 equispaced points on `[1e-15, 10]` and 10 on `[15, 10000]`.
    pub fn ridge_default() -> Self {
        let mut v = linspace(1e-15, 10.0, 10);
        v.extend(linspace(15.0, 10_000.0, 10));
        Self::new(PenaltyKind::Ridge, None, v).expect("valid grid")
    }

    /// 10 equispaced points on `[1e-15, 0.2]` and 10 on `[0.3, 20]`.
    pub fn entropy_default() -> Self {
        let mut v = linspace(1e-15, 0.2, 10);
        v.extend(linspace(0.3, 20.0, 10));
        Self::new(PenaltyKind::Entropy, None, v).expect("valid grid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The grid with `lambda` inserted in order (no-op if already present).
    pub fn with_value(mut self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!("invalid lambda {lambda}")));
        }
        if let Err(pos) = self.values.binary_search_by(|v| v.total_cmp(&lambda)) {
            self.values.insert(pos, lambda);
        }
        Ok(self)
    }

    pub fn spec(&self, lambda: f64) -> Result<PenaltySpec> {
        PenaltySpec::new(self.kind, lambda, self.alpha)
    }
}

/// One simulated replication. Index 0 of `y`, `z` and `forecasts` is round 1;
/// the last entry is the evaluation round T+1.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPath {
    /// State x_0..x_{T+1}, including the stationary draw x_0.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `z[t][k]`
    pub z: Vec<Vec<f64>>,
    pub forecasts: Vec<Vec<GaussianForecast>>,
}

impl SimulatedPath {
    /// Component densities at the realizations of the estimation rounds.
    pub fn training_densities(&self) -> Result<DensityMatrix> {
        let t = self.y.len() - 1;
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|s| self.forecasts[s].iter().map(|f| f.density(self.y[s])).collect())
            .collect();
        DensityMatrix::from_rows(&rows)
    }

    /// Component log densities at the evaluation-round realization.
    pub fn evaluation_log_densities(&self) -> Vec<f64> {
        let last = self.y.len() - 1;
        self.forecasts[last].iter().map(|f| f.log_density(self.y[last])).collect()
    }
}

const ROLE_STATE: u64 = 0;
const ROLE_TARGET_NOISE: u64 = 1;
const ROLE_SIGNAL_NOISE: u64 = 2;

fn stream(seed: u64, replication: u64, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replication << 2) | role);
    rng
}

/// Simulates replication `replication` of `config`. Each random role has its
/// own stream keyed by (seed, replication, role), so paths do not depend on
/// the order replications run in.
pub fn simulate_path(config: &DgpConfig, replication: u64) -> Result<SimulatedPath> {
    config.validate()?;
    let n = config.rounds + 1;
    let k = config.num_forecasters();
    let mut state = stream(config.seed, replication, ROLE_STATE);
    let mut target = stream(config.seed, replication, ROLE_TARGET_NOISE);
    let mut signal = stream(config.seed, replication, ROLE_SIGNAL_NOISE);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut x = Vec::with_capacity(n + 1);
    x.push(config.stationary_variance().sqrt() * normal(&mut state));
    for t in 1..=n {
        x.push(config.phi_x * x[t - 1] + config.sigma_x * normal(&mut state));
    }
    let y: Vec<f64> = (1..=n).map(|t| x[t] + config.sigma_y * normal(&mut target)).collect();
    let z: Vec<Vec<f64>> = (1..=n)
        .map(|t| config.sigma_z.iter().map(|s| x[t] + s * normal(&mut signal)).collect())
        .collect();
    let variance = config.sigma_y * config.sigma_y;
    let forecasts = z
        .iter()
        .map(|row| row.iter().map(|zk| GaussianForecast::new(config.phi_x * zk, variance)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    debug_assert_eq!(z[0].len(), k);
    Ok(SimulatedPath { x, y, z, forecasts })
}

/// Log of the mixture density `sum_k w_k f_k(y)` from component log densities.
pub fn mixture_log_density(weights: &[f64], log_densities: &[f64]) -> f64 {
    let terms: Vec<f64> = weights
        .iter()
        .zip(log_densities)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, l)| w.ln() + l)
        .collect();
    log_sum_exp(&terms)
}

/// Log density of the equally weighted mixture of `members`.
pub fn equal_mixture_log_density(members: &[usize], log_densities: &[f64]) -> f64 {
    let terms: Vec<f64> = members.iter().map(|&m| log_densities[m]).collect();
    log_sum_exp(&terms) - (members.len() as f64).ln()
}

/// What [`run_experiment`] evaluates besides the simple average, the
/// unpenalized simplex and the individual forecasters, which always run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub grids: Vec<LambdaGrid>,
    pub best_n: Vec<usize>,
    pub best_le_n: Vec<usize>,
    pub solver: SolverConfig,
    /// Size of the rayon pool; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl ExperimentSpec {
    /// Ridge and entropy grids, Best-N for N in {1..10, 15, 20} and
    /// Best ≤N for N in {2, 3, 5, 10}, clipped to K.
    pub fn standard(k: usize) -> Self {
        let clip = |v: Vec<usize>| v.into_iter().filter(|n| *n <= k).collect();
        Self {
            grids: vec![LambdaGrid::ridge_default(), LambdaGrid::entropy_default()],
            best_n: clip((1..=10).chain([15, 20]).collect()),
            best_le_n: clip(vec![2, 3, 5, 10]),
            solver: SolverConfig::default(),
            workers: None,
        }
    }

    /// Only the simple average, simplex and individual rows.
    pub fn minimal() -> Self {
        Self {
            grids: Vec::new(),
            best_n: Vec::new(),
            best_le_n: Vec::new(),
            solver: SolverConfig::default(),
            workers: None,
        }
    }
}

/// Out-of-sample log score and number of selected forecasters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub score: f64,
    pub selected: f64,
}

impl Outcome {
    fn new(score: f64, selected: usize) -> Self {
        Self {
            score,
            selected: selected as f64,
        }
    }
}

/// Everything one replication produces.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationResult {
    pub simple_average: f64,
    pub simplex: Outcome,
    pub simplex_weights: Vec<f64>,
    /// `penalized[g][i]` is grid g at its i-th lambda.
    pub penalized: Vec<Vec<Outcome>>,
    pub best_n: Vec<Outcome>,
    pub best_le_n: Vec<Outcome>,
    /// Individual scores sorted from best to worst.
    pub individuals: Vec<f64>,
    pub converged: bool,
}

fn outcome(weights: &MixtureWeights, eval: &[f64]) -> Outcome {
    Outcome::new(mixture_log_density(weights.weights(), eval), weights.selected_count())
}

/// Runs all methods of `spec` on one replication.
pub fn run_replication(config: &DgpConfig, spec: &ExperimentSpec, replication: u64) -> Result<ReplicationResult> {
    let path = simulate_path(config, replication)?;
    let dens = path.training_densities()?;
    let eval = path.evaluation_log_densities();
    let k = config.num_forecasters();
    let all: Vec<usize> = (0..k).collect();

    let simplex = estimate_weights(&dens, &PenaltySpec::none(), &spec.solver)?;
    let mut converged = simplex.converged;
    let mut penalized = Vec::with_capacity(spec.grids.len());
    for grid in &spec.grids {
        let mut row = Vec::with_capacity(grid.values().len());
        for &lambda in grid.values() {
            let est = estimate_weights(&dens, &grid.spec(lambda)?, &spec.solver)?;
            converged &= est.converged;
            row.push(outcome(&est.weights, &eval));
        }
        penalized.push(row);
    }

    // one enumeration covers both the Best-N sizes and every size up to the largest Best ≤N
    let largest_le = spec.best_le_n.iter().copied().max().unwrap_or(0);
    let mut sizes: Vec<usize> = (1..=largest_le).chain(spec.best_n.iter().copied()).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let found = best_by_size(&dens, &sizes)?;
    let by_size = |n: usize| &found[sizes.binary_search(&n).expect("size was requested")];
    let best_n = spec
        .best_n
        .iter()
        .map(|&n| Outcome::new(equal_mixture_log_density(&by_size(n).members, &eval), n))
        .collect();
    let best_le_n = spec
        .best_le_n
        .iter()
        .map(|&nmax| {
            // ties resolve to the smaller, then lexicographically first, subset
            let best = (1..=nmax)
                .map(by_size)
                .min_by(|a, b| {
                    a.in_sample_objective
                        .total_cmp(&b.in_sample_objective)
                        .then_with(|| a.members.cmp(&b.members))
                })
                .expect("nmax >= 1");
            Outcome::new(equal_mixture_log_density(&best.members, &eval), best.size)
        })
        .collect();

    let mut individuals = eval.clone();
    individuals.sort_by(|a, b| b.total_cmp(a));
    Ok(ReplicationResult {
        simple_average: equal_mixture_log_density(&all, &eval),
        simplex: outcome(&simplex.weights, &eval),
        simplex_weights: simplex.weights.weights().to_vec(),
        penalized,
        best_n,
        best_le_n,
        individuals,
        converged,
    })
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub lambda: Option<f64>,
    pub mean_score: f64,
    pub mean_selected: Option<f64>,
}

/// Mean score and selection count at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub mean_score: f64,
    pub mean_selected: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub replications: usize,
    pub rows: Vec<TableRow>,
    pub curves: Vec<CurvePoint>,
    /// Grid value with the best mean score, per grid (ties go to the smaller lambda).
    pub best_lambda: Vec<(PenaltyKind, f64)>,
    pub mean_simplex_weights: Vec<f64>,
    /// Replications in which some solver run hit its iteration cap.
    pub unconverged: usize,
}

impl ExperimentResult {
    pub fn row(&self, method: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn curve_at(&self, kind: PenaltyKind, lambda: f64) -> Option<&CurvePoint> {
        self.curves.iter().find(|c| c.kind == kind && c.lambda == lambda)
    }
}

/// Linear-interpolation quantile of values sorted from best to worst;
/// `q = 1` is the best value.
fn quantile_desc(sorted_desc: &[f64], q: f64) -> f64 {
    let n = sorted_desc.len();
    let pos = (1.0 - q) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted_desc[lo] + (sorted_desc[hi] - sorted_desc[lo]) * frac
}

/// Runs every replication and averages. Replications run on the rayon pool;
/// results are collected in replication order and summed sequentially, so
/// output is identical for any worker count.
pub fn run_experiment(config: &DgpConfig, spec: &ExperimentSpec) -> Result<ExperimentResult> {
    config.validate()?;
    for &n in spec.best_n.iter().chain(&spec.best_le_n) {
        if n < 1 || n > config.num_forecasters() {
            return Err(Error::Config(format!(
                "subset size {n} out of range for K={}",
                config.num_forecasters()
            )));
        }
    }
    let run = || {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|r| run_replication(config, spec, r))
            .collect::<Result<Vec<_>>>()
    };
    let results = match spec.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    Ok(summarize(config, spec, &results))
}

fn summarize(config: &DgpConfig, spec: &ExperimentSpec, results: &[ReplicationResult]) -> ExperimentResult {
    let n = results.len() as f64;
    let k = config.num_forecasters();
    let mean = |f: &dyn Fn(&ReplicationResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let mut rows = Vec::new();
    let individual_rows = [
        ("best individual", 1.0),
        ("95th percentile individual", 0.95),
        ("median individual", 0.5),
        ("5th percentile individual", 0.05),
        ("worst individual", 0.0),
    ];
    for (label, q) in individual_rows {
        rows.push(TableRow {
            method: label.into(),
            lambda: None,
            mean_score: mean(&|r| quantile_desc(&r.individuals, q)),
            mean_selected: Some(1.0),
        });
    }
    rows.push(TableRow {
        method: "simplex".into(),
        lambda: None,
        mean_score: mean(&|r| r.simplex.score),
        mean_selected: Some(mean(&|r| r.simplex.selected)),
    });

    let mut curves = Vec::new();
    let mut best_lambda = Vec::new();
    for (g, grid) in spec.grids.iter().enumerate() {
        let mut best: Option<CurvePoint> = None;
        for (i, &lambda) in grid.values().iter().enumerate() {
            let point = CurvePoint {
                kind: grid.kind,
                lambda,
                mean_score: mean(&|r| r.penalized[g][i].score),
                mean_selected: mean(&|r| r.penalized[g][i].selected),
            };
            if best.as_ref().is_none_or(|b| point.mean_score > b.mean_score) {
                best = Some(point.clone());
            }
            curves.push(point);
        }
        let best = best.expect("grids are nonempty");
        best_lambda.push((grid.kind, best.lambda));
        rows.push(TableRow {
            method: format!("simplex+{}", grid.kind),
            lambda: Some(best.lambda),
            mean_score: best.mean_score,
            mean_selected: Some(best.mean_selected),
        });
    }
    for (i, size) in spec.best_n.iter().enumerate() {
        rows.push(TableRow {
            method: format!("best {size}-average"),
            lambda: None,
            mean_score: mean(&|r| r.best_n[i].score),
            mean_selected: Some(*size as f64),
        });
    }
    for (i, size) in spec.best_le_n.iter().enumerate() {
        rows.push(TableRow {
            method: format!("best <={size}-average"),
            lambda: None,
            mean_score: mean(&|r| r.best_le_n[i].score),
            mean_selected: Some(mean(&|r| r.best_le_n[i].selected)),
        });
    }
    rows.push(TableRow {
        method: "simple average".into(),
        lambda: None,
        mean_score: mean(&|r| r.simple_average),
        mean_selected: Some(k as f64),
    });

    let mean_simplex_weights = (0..k).map(|j| mean(&|r| r.simplex_weights[j])).collect();
    ExperimentResult {
        replications: results.len(),
        rows,
        curves,
        best_lambda,
        mean_simplex_weights,
        unconverged: results.iter().filter(|r| !r.converged).count(),
    }
}

impl fmt::Display for TableRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<28} {:>8.3}", self.method, self.mean_score)?;
        if let Some(s) = self.mean_selected {
            write!(f, " {s:>6.2}")?;
        }
        if let Some(l) = self.lambda {
            write!(f, " lambda={l}")?;
        }
        Ok(())
    }
}
