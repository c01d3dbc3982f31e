//! Rolling out-of-sample evaluation of combination methods, and discrete
//! PIT calibration histograms.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::forecast::{mixture, ForecastPanel, HistogramForecast, MixtureWeights, SurveyQuarter};
use crate::optimizer::{estimate_weights, partially_egalitarian_ridge, DensityMatrix, SolverConfig};
use crate::penalty::PenaltySpec;
use crate::scoring::{score_at, Score, ScoreReport, ScoreRule};
use crate::subset::{best_le_n_average, best_n_average, candidate_count};

/// A combination method as run by the backtest.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    SimpleAverage,
    /// Simplex-constrained log-score weights with an optional penalty.
    Simplex(PenaltySpec),
    BestN(usize),
    BestLeN(usize),
    PartiallyEgalitarianRidge(f64),
}

impl Method {
    /// Subsets searched per round, for the subset methods.
    pub fn candidates_per_round(&self, k: usize) -> Option<u64> {
        match self {
            Method::BestN(n) => Some(crate::subset::binomial(k, *n)),
            Method::BestLeN(n) => Some(candidate_count(k, *n)),
            Method::PartiallyEgalitarianRidge(_) => Some((1u64 << k) - 1),
            _ => None,
        }
    }

    /// Weights estimated from the given in-sample densities.
    pub fn estimate(&self, densities: &DensityMatrix, solver: &SolverConfig) -> Result<(MixtureWeights, bool)> {
        let k = densities.num_cols();
        Ok(match self {
            Method::SimpleAverage => (MixtureWeights::equal(k), true),
            Method::Simplex(p) => {
                let est = estimate_weights(densities, p, solver)?;
                (est.weights, est.converged)
            }
            Method::BestN(n) => (best_n_average(densities, *n)?.weights, true),
            Method::BestLeN(n) => (best_le_n_average(densities, *n)?.weights, true),
            Method::PartiallyEgalitarianRidge(lambda) => {
                (partially_egalitarian_ridge(densities, *lambda, solver)?.weights, true)
            }
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::SimpleAverage => write!(f, "simple-average"),
            // a zero-strength penalty is the plain simplex estimator
            Method::Simplex(p) if p.is_inactive() => write!(f, "simplex"),
            Method::Simplex(p) => match p.alpha() {
                Some(a) => write!(f, "simplex+{}(lambda={}, alpha={a})", p.kind(), p.lambda()),
                None => write!(f, "simplex+{}(lambda={})", p.kind(), p.lambda()),
            },
            Method::BestN(n) => write!(f, "best-{n}-average"),
            Method::BestLeN(n) => write!(f, "best-le-{n}-average"),
            Method::PartiallyEgalitarianRidge(l) => write!(f, "peg-ridge(lambda={l})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestConfig {
    /// Rolling estimation window length.
    pub window: usize,
    /// Rounds before the first evaluation round.
    pub burn_in: usize,
    pub method: Method,
    pub rules: Vec<ScoreRule>,
    /// Evaluate only once a full window is available, instead of expanding
    /// the window up to `window` rounds after burn-in.
    pub strict_rolling: bool,
    pub solver: SolverConfig,
}

impl BacktestConfig {
    pub fn new(method: Method, window: usize, burn_in: usize) -> Self {
        Self {
            window,
            burn_in,
            method,
            rules: ScoreRule::ALL.to_vec(),
            strict_rolling: false,
            solver: SolverConfig::default(),
        }
    }

    fn validate(&self, rounds: usize) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!("window must be >= 2, got {}", self.window)));
        }
        if self.burn_in < 1 {
            return Err(Error::Config("burn_in must be >= 1".into()));
        }
        if self.first_round() >= rounds {
            return Err(Error::Config(format!(
                "panel has {rounds} rounds; nothing left to evaluate after round {}",
                self.first_round()
            )));
        }
        Ok(())
    }

    fn first_round(&self) -> usize {
        if self.strict_rolling {
            self.burn_in.max(self.window)
        } else {
            self.burn_in
        }
    }

    /// Estimation rounds used to forecast round `t`.
    pub fn window_for(&self, t: usize) -> Range<usize> {
        t.saturating_sub(self.window)..t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestRound {
    pub round: usize,
    pub date: SurveyQuarter,
    pub window: Range<usize>,
    pub weights: MixtureWeights,
    pub converged: bool,
    pub mixture: HistogramForecast,
    pub realization: f64,
    /// One score per configured rule, in order.
    pub scores: Vec<Score>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestReport {
    pub method: Method,
    pub rounds: Vec<BacktestRound>,
    pub reports: Vec<ScoreReport>,
    /// Mean log predictive density over evaluation rounds (larger is better).
    pub mean_log_predictive: Option<f64>,
    pub mean_selected: f64,
}

impl BacktestReport {
    pub fn report(&self, rule: ScoreRule) -> Option<&ScoreReport> {
        self.reports.iter().find(|r| r.rule == rule)
    }
}

/// Out-of-sample evaluation: each round's weights use only earlier rounds
/// inside the window, and the resulting mixture is scored at that round.
///
/// Rounds are estimated in parallel on the rayon pool; results are
/// collected in round order.
pub fn rolling_backtest(panel: &ForecastPanel, config: &BacktestConfig) -> Result<BacktestReport> {
    config.validate(panel.num_rounds())?;
    let k = panel.num_forecasters();
    let rounds: Vec<BacktestRound> = (config.first_round()..panel.num_rounds())
        .into_par_iter()
        .map(|t| {
            let window = config.window_for(t);
            let densities = DensityMatrix::from_panel(panel, window.clone())?;
            let (weights, converged) = config.method.estimate(&densities, &config.solver)?;
            let forecasts = (0..k).map(|j| panel.require(t, j)).collect::<Result<Vec<_>>>()?;
            let mix = mixture(&weights, &forecasts)?;
            let y = panel.realization(t)?;
            let bin = panel.grid().locate(y)?;
            let scores = config.rules.iter().map(|r| score_at(*r, mix.probs(), bin)).collect();
            Ok(BacktestRound {
                round: t,
                date: panel.dates()[t],
                window,
                weights,
                converged,
                mixture: mix,
                realization: y,
                scores,
            })
        })
        .collect::<Result<_>>()?;

    let reports: Vec<ScoreReport> = config
        .rules
        .iter()
        .enumerate()
        .map(|(i, rule)| ScoreReport::from_periods(*rule, rounds.iter().map(|r| r.scores[i]).collect()))
        .collect();
    let mean_log_predictive = match reports.iter().find(|r| r.rule == ScoreRule::Log) {
        Some(r) => r.mean_log_predictive,
        None => {
            let log = ScoreReport::from_periods(
                ScoreRule::Log,
                rounds
                    .iter()
                    .map(|r| score_at(ScoreRule::Log, r.mixture.probs(), r.mixture.grid().locate(r.realization).unwrap()))
                    .collect(),
            );
            log.mean_log_predictive
        }
    };
    let mean_selected = rounds.iter().map(|r| r.weights.selected_count() as f64).sum::<f64>() / rounds.len() as f64;
    Ok(BacktestReport {
        method: config.method.clone(),
        rounds,
        reports,
        mean_log_predictive,
        mean_selected,
    })
}

/// The cdf segment `[P_{m-1}, P_m]` of a discrete forecast at its realized bin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitSegment {
    pub lower: f64,
    pub upper: f64,
}

impl PitSegment {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PitMode {
    Nonrandomized,
    Randomized { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PitValue {
    Segment(PitSegment),
    Draw(f64),
}

pub fn pit_segment(forecast: &HistogramForecast, y: f64) -> Result<PitSegment> {
    let m = forecast.grid().locate(y)?;
    let below: f64 = forecast.probs()[..m].iter().sum();
    let upper = (below + forecast.probs()[m]).min(1.0);
    Ok(PitSegment {
        lower: below.min(upper),
        upper,
    })
}

/// Discrete PIT: the cdf segment, or one uniform draw from it.
pub fn discrete_pit(forecast: &HistogramForecast, y: f64, mode: PitMode) -> Result<PitValue> {
    let seg = pit_segment(forecast, y)?;
    Ok(match mode {
        PitMode::Nonrandomized => PitValue::Segment(seg),
        PitMode::Randomized { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            PitValue::Draw(seg.lower + rng.random::<f64>() * seg.length())
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PitResult {
    pub segments: Vec<PitSegment>,
    /// Observation mass per PIT bin `[j/J, (j+1)/J)`.
    pub masses: Vec<f64>,
    /// Pointwise `(lower, upper)` binomial quantiles under uniform PIT.
    pub bands: Vec<(f64, f64)>,
    pub coverage: f64,
    pub subsample: Option<String>,
}

impl PitResult {
    pub fn bins_inside_bands(&self) -> usize {
        self.masses
            .iter()
            .zip(&self.bands)
            .filter(|(m, (lo, hi))| **m >= *lo && **m <= *hi)
            .count()
    }
}

/// Nonrandomized PIT histogram: each segment spreads unit mass over the PIT
/// bins in proportion to overlap. A zero-length segment is an atom.
pub fn pit_histogram(segments: &[PitSegment], bins: usize, coverage: f64) -> Result<PitResult> {
    if bins < 2 {
        return Err(Error::Config(format!("PIT histogram needs >= 2 bins, got {bins}")));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::Config(format!("coverage must lie in (0, 1), got {coverage}")));
    }
    let j = bins as f64;
    let mut masses = vec![0.0; bins];
    for seg in segments {
        if !(0.0..=1.0).contains(&seg.lower) || !(0.0..=1.0).contains(&seg.upper) || seg.lower > seg.upper {
            return Err(Error::Domain(format!("invalid PIT segment [{}, {}]", seg.lower, seg.upper)));
        }
        let len = seg.length();
        if len <= 0.0 {
            let b = ((seg.upper * j).floor() as usize).min(bins - 1);
            masses[b] += 1.0;
            continue;
        }
        let first = ((seg.lower * j).floor() as usize).min(bins - 1);
        let last = ((seg.upper * j).ceil() as usize).clamp(first + 1, bins);
        for (b, mass) in masses.iter_mut().enumerate().take(last).skip(first) {
            let a = b as f64 / j;
            let c = (b + 1) as f64 / j;
            let overlap = seg.upper.min(c) - seg.lower.max(a);
            if overlap > 0.0 {
                *mass += overlap / len;
            }
        }
    }
    let bands = binomial_bands(segments.len() as u64, 1.0 / j, coverage);
    Ok(PitResult {
        segments: segments.to_vec(),
        masses,
        bands: vec![bands; bins],
        coverage,
        subsample: None,
    })
}

fn binomial_bands(n: u64, p: f64, coverage: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let dist = Binomial::new(p, n).expect("p lies in (0, 1)");
    let tail = (1.0 - coverage) / 2.0;
    (binomial_quantile(&dist, n, tail) as f64, binomial_quantile(&dist, n, 1.0 - tail) as f64)
}

/// Smallest `x` with `P(X <= x) >= q`.
fn binomial_quantile(dist: &Binomial, n: u64, q: f64) -> u64 {
    let (mut lo, mut hi) = (0u64, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if dist.cdf(mid) >= q {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// PIT segments of a backtest's mixtures at their realizations.
pub fn backtest_pit_segments(report: &BacktestReport) -> Result<Vec<PitSegment>> {
    report.rounds.iter().map(|r| pit_segment(&r.mixture, r.realization)).collect()
}

/// Splits a panel into rounds dated `<= boundary` and rounds after it.
pub fn subsample_split(panel: &ForecastPanel, boundary: SurveyQuarter) -> Result<(ForecastPanel, ForecastPanel)> {
    let dates = panel.dates();
    match (dates.first(), dates.last()) {
        (Some(first), Some(last)) if boundary >= *first && boundary <= *last => {
            let cut = dates.partition_point(|d| *d <= boundary);
            Ok((panel.rounds(0..cut), panel.rounds(cut..dates.len())))
        }
        _ => Err(Error::DateRange(boundary.to_string())),
    }
}

/// Number of PIT bins and band coverage used when none are given.
pub const DEFAULT_PIT_BINS: usize = 10;
pub const DEFAULT_PIT_COVERAGE: f64 = 0.90;

impl FromStr for PitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonrandomized" => Ok(PitMode::Nonrandomized),
            other => match other.strip_prefix("randomized:") {
                Some(seed) => seed
                    .parse()
                    .map(|seed| PitMode::Randomized { seed })
                    .map_err(|_| Error::Config(format!("bad seed in PIT mode {other:?}"))),
                None => Err(Error::Config(format!("unknown PIT mode {other:?}"))),
            },
        }
    }
}
