//! Regularized linear opinion pools of density forecasts.
//!
//! Weights on the probability simplex are estimated by minimizing the
//! in-sample log score plus a divergence penalty toward equal weights. The
//! crate also covers subset averaging, rolling out-of-sample evaluation,
//! discrete PIT diagnostics, a Monte Carlo harness and an ingestion pipeline
//! for histogram survey data.

pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod ingest;
pub mod montecarlo;
pub mod optimizer;
pub mod penalty;
pub mod report;
pub mod scoring;
pub mod subset;

pub use error::{Error, Result};
pub use forecast::{
    mixture, real_rate_transform, BinGrid, Closed, CombinationMethod, ForecastPanel, GaussianForecast,
    HistogramForecast, MixtureWeights, SurveyQuarter,
};
pub use optimizer::{estimate_weights, partially_egalitarian_ridge, DensityMatrix, Estimate, SolverConfig};
pub use penalty::{PenaltyKind, PenaltySpec};
pub use scoring::{panel_score, Score, ScoreReport, ScoreRule, ScoreTarget};
pub use subset::{best_le_n_average, best_n_average, SubsetResult};
pub use evaluation::{
    discrete_pit, pit_histogram, rolling_backtest, subsample_split, BacktestConfig, BacktestReport, Method, PitMode,
    PitResult, PitSegment,
};
pub use ingest::{
    add_uniform_forecaster, filter_entry_exit, harmonize_bins, interpolate_gaps, load_panel, repair_zero_probability,
    run_pipeline, write_panel, IngestConfig, IngestLog, RawSurveyTable, RealizationTable, UNIFORM_ID,
};
pub use montecarlo::{dgp_preset, run_experiment, simulate_path, DgpConfig, ExperimentResult, ExperimentSpec, LambdaGrid};
