//! The four subcommands. Each reads its inputs, runs the library, and
//! writes CSV outputs plus `manifest.json` into `--out-dir`.

use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use regmix::evaluation::{discrete_pit, pit_histogram, PitSegment, PitValue};
use regmix::ingest::{load_panel, run_pipeline, write_panel, IngestConfig, RawSurveyTable, RealizationTable};
use regmix::montecarlo::{dgp_preset, run_experiment, ExperimentSpec, LambdaGrid};
use regmix::penalty::{PenaltyKind, PenaltySpec};
use regmix::{real_rate_transform, report, rolling_backtest, BacktestConfig, BacktestReport, BinGrid, ForecastPanel};
use regmix::{Method, PitMode, SurveyQuarter};

use crate::manifest::RunManifest;

/// A problem with the command line itself; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn create(out_dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out_dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn prepare_out_dir(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    /// Raw survey rows (survey_date,forecaster_id,bin_lower,bin_upper,probability).
    #[arg(long)]
    pub survey: PathBuf,
    /// Realized values (survey_date,realized_value).
    #[arg(long)]
    pub realizations: PathBuf,
    /// Comma-separated target bin edges; defaults to the 11-bin inflation grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid_edges: Option<Vec<String>>,
    /// Drop forecasters missing more than this many consecutive rounds.
    #[arg(long, default_value_t = 4)]
    pub max_missing_run: usize,
    /// Number of rank groups used to interpolate gaps.
    #[arg(long, default_value_t = 5)]
    pub groups: usize,
    /// Do not append the uniform forecaster.
    #[arg(long)]
    pub no_uniform: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

fn parse_grid(tokens: &Option<Vec<String>>) -> Result<BinGrid> {
    let Some(tokens) = tokens else {
        return Ok(BinGrid::inflation_standard());
    };
    let edges = tokens
        .iter()
        .map(|t| match t.trim() {
            "-inf" => Ok(f64::NEG_INFINITY),
            "inf" => Ok(f64::INFINITY),
            s => s.parse::<f64>().map_err(|_| usage(format!("bad grid edge {s:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinGrid::new(edges)?)
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let grid = Arc::new(parse_grid(&args.grid_edges)?);
    let raw = RawSurveyTable::from_reader(open(&args.survey)?)
        .with_context(|| format!("reading {}", args.survey.display()))?;
    let real = RealizationTable::from_reader(open(&args.realizations)?)
        .with_context(|| format!("reading {}", args.realizations.display()))?;
    let config = IngestConfig {
        max_missing_run: args.max_missing_run,
        groups: args.groups,
        add_uniform: !args.no_uniform,
    };
    let (panel, log) = run_pipeline(&raw, &real, grid, &config)?;

    prepare_out_dir(&args.out_dir)?;
    let mut w = create(&args.out_dir, "panel.csv")?;
    write_panel(&panel, &mut w)?;
    w.flush()?;
    fs::write(args.out_dir.join("ingest.log"), log.to_string())?;
    let mut manifest = RunManifest::new("ingest", args, None, &[&args.survey, &args.realizations])?;
    manifest.outputs = vec!["panel.csv".into(), "ingest.log".into()];
    manifest.write(&args.out_dir)?;
    eprintln!(
        "ingested {} forecasters x {} rounds into {}",
        panel.num_forecasters(),
        panel.num_rounds(),
        args.out_dir.join("panel.csv").display()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Simplex,
    Ridge,
    Entropy,
    Renyi,
    Tv,
    BestN,
    BestLeN,
    SimpleAverage,
    PegRidge,
}

/// Method selection shared by `backtest` and `pit`.
#[derive(Args, Debug, Serialize)]
pub struct MethodArgs {
    /// Harmonized panel file, as written by `ingest`.
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub realizations: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodName,
    /// Penalty strength for ridge, entropy, renyi, tv and peg-ridge.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Renyi order.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Subset size for best-n and best-le-n.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    #[arg(long, default_value_t = 8)]
    pub burn_in: usize,
    /// Start evaluating only once a full window is available.
    #[arg(long)]
    pub strict_rolling: bool,
}

impl MethodArgs {
    pub fn method(&self) -> Result<Method> {
        let lambda = || {
            self.lambda
                .ok_or_else(|| usage(format!("--method {} needs --lambda", self.method_label())))
        };
        let n = || {
            self.n
                .ok_or_else(|| usage(format!("--method {} needs --n", self.method_label())))
        };
        let penalized = |kind: PenaltyKind| -> Result<Method> {
            let spec = PenaltySpec::new(kind, lambda()?, self.alpha).map_err(|e| usage(e.to_string()))?;
            Ok(Method::Simplex(spec))
        };
        if self.alpha.is_some() && self.method != MethodName::Renyi {
            return Err(usage("--alpha is only used by --method renyi"));
        }
        Ok(match self.method {
            MethodName::Simplex => Method::Simplex(PenaltySpec::none()),
            MethodName::Ridge => penalized(PenaltyKind::Ridge)?,
            MethodName::Entropy => penalized(PenaltyKind::Entropy)?,
            MethodName::Renyi => penalized(PenaltyKind::Renyi)?,
            MethodName::Tv => penalized(PenaltyKind::TotalVariation)?,
            MethodName::BestN => Method::BestN(n()?),
            MethodName::BestLeN => Method::BestLeN(n()?),
            MethodName::SimpleAverage => Method::SimpleAverage,
            MethodName::PegRidge => Method::PartiallyEgalitarianRidge(lambda()?),
        })
    }

    fn method_label(&self) -> String {
        self.method.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
    }

    fn load(&self) -> Result<ForecastPanel> {
        let raw = RawSurveyTable::from_reader(open(&self.panel)?)
            .with_context(|| format!("reading {}", self.panel.display()))?;
        let real = RealizationTable::from_reader(open(&self.realizations)?)
            .with_context(|| format!("reading {}", self.realizations.display()))?;
        Ok(load_panel(&raw, &real)?)
    }

    fn run(&self, panel: &ForecastPanel) -> Result<BacktestReport> {
        let mut config = BacktestConfig::new(self.method()?, self.window, self.burn_in);
        config.strict_rolling = self.strict_rolling;
        Ok(rolling_backtest(panel, &config)?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

fn backtest_log(panel: &ForecastPanel, args: &MethodArgs, report: &BacktestReport) -> String {
    let dates = panel.dates();
    let k = panel.num_forecasters();
    let candidates = report.method.candidates_per_round(k);
    let mut log = String::new();
    let _ = writeln!(log, "method: {}", report.method);
    let _ = writeln!(log, "panel: {} forecasters x {} rounds", k, panel.num_rounds());
    let _ = writeln!(
        log,
        "window {}, burn-in {}, {}",
        args.window,
        args.burn_in,
        if args.strict_rolling { "strict rolling" } else { "expanding then rolling" }
    );
    if let Some(c) = candidates {
        let _ = writeln!(log, "candidates per round: {c}");
    }
    for r in &report.rounds {
        let _ = write!(
            log,
            "{} estimated on {}..{} ({} rounds): selected {}, converged {}",
            r.date,
            dates[r.window.start],
            dates[r.window.end - 1],
            r.window.len(),
            r.weights.selected_count(),
            r.converged
        );
        if let Some(c) = candidates {
            let _ = write!(log, ", candidates {c}");
        }
        log.push('\n');
    }
    if let Some(m) = report.mean_log_predictive {
        let _ = writeln!(log, "mean log predictive density: {m}");
    }
    let _ = writeln!(log, "mean selected: {}", report.mean_selected);
    log
}

pub fn backtest(args: &BacktestArgs) -> Result<()> {
    let m = &args.method;
    m.method()?;
    let panel = m.load()?;
    let report = m.run(&panel)?;
    let reports = std::slice::from_ref(&report);

    prepare_out_dir(&args.out_dir)?;
    let outputs = ["scores.csv", "weights.csv", "mixtures.csv", "summary.csv", "backtest.log"];
    let mut w = create(&args.out_dir, outputs[0])?;
    report::write_backtest_scores(reports, &mut w)?;
    w.flush()?;
    let mut w = create(&args.out_dir, outputs[1])?;
    report::write_backtest_weights(reports, panel.forecaster_ids(), &mut w)?;
    w.flush()?;
    let mut w = create(&args.out_dir, outputs[2])?;
    report::write_backtest_mixtures(reports, &mut w)?;
    w.flush()?;
    let mut w = create(&args.out_dir, outputs[3])?;
    report::write_backtest_summary(reports, &mut w)?;
    w.flush()?;
    fs::write(args.out_dir.join(outputs[4]), backtest_log(&panel, m, &report))?;

    let mut manifest = RunManifest::new("backtest", args, None, &[&m.panel, &m.realizations])?;
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.write(&args.out_dir)?;
    match report.mean_log_predictive {
        Some(v) => eprintln!("{}: {} rounds, mean log predictive density {v:.4}", report.method, report.rounds.len()),
        None => eprintln!("{}: {} rounds, log score overflowed", report.method, report.rounds.len()),
    }
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct MontecarloArgs {
    /// Data-generating process preset.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub dgp: u8,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    /// Seed for every random draw; required.
    #[arg(long)]
    pub seed: u64,
    /// Number of simulated forecasters.
    #[arg(long, default_value_t = 20)]
    pub forecasters: usize,
    /// Comma-separated ridge strengths (default grid if omitted).
    #[arg(long, value_delimiter = ',')]
    pub ridge_grid: Option<Vec<f64>>,
    /// Comma-separated entropy strengths (default grid if omitted).
    #[arg(long, value_delimiter = ',')]
    pub entropy_grid: Option<Vec<f64>>,
    /// Best-N sizes (default 1..10, 15, 20 up to the number of forecasters).
    #[arg(long, value_delimiter = ',')]
    pub best_n: Option<Vec<usize>>,
    /// Best <=N sizes (default 2, 3, 5, 10).
    #[arg(long, value_delimiter = ',')]
    pub best_le_n: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn montecarlo(args: &MontecarloArgs, workers: Option<usize>) -> Result<()> {
    let mut config = dgp_preset(args.dgp, args.forecasters).map_err(|e| usage(e.to_string()))?;
    config.replications = args.reps;
    config.seed = args.seed;
    let mut spec = ExperimentSpec::standard(args.forecasters);
    spec.workers = workers;
    if let Some(values) = &args.ridge_grid {
        spec.grids[0] = LambdaGrid::new(PenaltyKind::Ridge, None, values.clone()).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(values) = &args.entropy_grid {
        spec.grids[1] =
            LambdaGrid::new(PenaltyKind::Entropy, None, values.clone()).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(n) = &args.best_n {
        spec.best_n = n.clone();
    }
    if let Some(n) = &args.best_le_n {
        spec.best_le_n = n.clone();
    }
    let result = run_experiment(&config, &spec)?;

    prepare_out_dir(&args.out_dir)?;
    let outputs = ["table.csv", "curves.csv", "montecarlo.log"];
    let mut w = create(&args.out_dir, outputs[0])?;
    report::write_experiment_table(&result, &mut w)?;
    w.flush()?;
    let mut w = create(&args.out_dir, outputs[1])?;
    report::write_experiment_curves(&result, &mut w)?;
    w.flush()?;
    let mut log = String::new();
    let _ = writeln!(log, "dgp {} with {} forecasters, {} replications, seed {}", args.dgp, args.forecasters, args.reps, args.seed);
    for (kind, lambda) in &result.best_lambda {
        let _ = writeln!(log, "best {kind} lambda: {lambda}");
    }
    let _ = writeln!(log, "replications with an unconverged solve: {}", result.unconverged);
    let weights: Vec<String> = result.mean_simplex_weights.iter().map(|w| format!("{w:.4}")).collect();
    let _ = writeln!(log, "mean simplex weights: {}", weights.join(" "));
    fs::write(args.out_dir.join(outputs[2]), log)?;

    let mut manifest = RunManifest::new("montecarlo", args, Some(args.seed), &[])?;
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.write(&args.out_dir)?;
    for row in &result.rows {
        eprintln!("{row}");
    }
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct PitArgs {
    #[command(flatten)]
    pub method: MethodArgs,
    /// Last date of the first subsample (YYYY-Qn).
    #[arg(long)]
    pub split: String,
    #[arg(long, default_value_t = regmix::evaluation::DEFAULT_PIT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = regmix::evaluation::DEFAULT_PIT_COVERAGE)]
    pub coverage: f64,
    /// Draw one uniform point per observation instead of spreading segments.
    #[arg(long, requires = "seed")]
    pub randomized: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate the implied real-rate forecast `nominal - inflation` instead.
    #[arg(long, requires = "nominal_rate")]
    pub real_rate: bool,
    #[arg(long)]
    pub nominal_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

fn pit_segments(report: &BacktestReport, args: &PitArgs, rounds: &[usize]) -> Result<Vec<PitSegment>> {
    rounds
        .iter()
        .map(|&i| {
            let r = &report.rounds[i];
            let (forecast, y) = match (args.real_rate, args.nominal_rate) {
                (true, Some(rate)) => (real_rate_transform(&r.mixture, rate)?, rate - r.realization),
                _ => (r.mixture.clone(), r.realization),
            };
            let mode = match (args.randomized, args.seed) {
                (true, Some(seed)) => PitMode::Randomized {
                    seed: seed.wrapping_add(r.round as u64),
                },
                _ => PitMode::Nonrandomized,
            };
            Ok(match discrete_pit(&forecast, y, mode)? {
                PitValue::Segment(s) => s,
                PitValue::Draw(u) => PitSegment { lower: u, upper: u },
            })
        })
        .collect()
}

pub fn pit(args: &PitArgs) -> Result<()> {
    let m = &args.method;
    m.method()?;
    let split: SurveyQuarter = args.split.parse().map_err(|e: regmix::Error| usage(e.to_string()))?;
    let panel = m.load()?;
    let dates = panel.dates();
    if split < dates[0] || split > dates[dates.len() - 1] {
        return Err(usage(format!(
            "--split {split} is outside the panel's range {}..{}",
            dates[0],
            dates[dates.len() - 1]
        )));
    }
    let report = m.run(&panel)?;
    let (first, second): (Vec<usize>, Vec<usize>) = (0..report.rounds.len()).partition(|&i| report.rounds[i].date <= split);

    prepare_out_dir(&args.out_dir)?;
    let outputs = ["pit_first.csv", "pit_second.csv"];
    let labels = [format!("<={split}"), format!(">{split}")];
    for ((name, rounds), label) in outputs.iter().zip([first, second]).zip(labels) {
        let results = if rounds.is_empty() {
            Vec::new()
        } else {
            let mut r = pit_histogram(&pit_segments(&report, args, &rounds)?, args.bins, args.coverage)?;
            r.subsample = Some(label.clone());
            eprintln!("{label}: {} observations, {}/{} bins inside bands", rounds.len(), r.bins_inside_bands(), args.bins);
            vec![r]
        };
        let mut w = create(&args.out_dir, name)?;
        report::write_pit(&results, &mut w)?;
        w.flush()?;
    }
    let mut manifest = RunManifest::new("pit", args, args.seed, &[&m.panel, &m.realizations])?;
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.write(&args.out_dir)?;
    Ok(())
}
