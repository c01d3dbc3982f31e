//! Survey ingestion: parsing histogram rows, harmonizing bins onto a fixed
//! grid, dropping forecasters with long absences, interpolating the
//! remaining gaps, repairing zero probabilities at realizations, and
//! appending a uniform benchmark forecaster.
//!
//! Survey files have the header
//! `survey_date,forecaster_id,bin_lower,bin_upper,probability`, one row per
//! bin, with `-inf`/`inf` for open ends and dates written `YYYY-Qn`.
//! Realization files have the header `survey_date,realized_value`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::forecast::{BinGrid, ForecastPanel, HistogramForecast, SurveyQuarter};
use crate::scoring::ranked_score_at;

pub const SURVEY_HEADER: [&str; 5] = ["survey_date", "forecaster_id", "bin_lower", "bin_upper", "probability"];
pub const REALIZATION_HEADER: [&str; 2] = ["survey_date", "realized_value"];

/// Identifier of the appended uniform forecaster.
pub const UNIFORM_ID: &str = "uniform";

/// Probability given to a realized bin that was assigned zero.
pub const REPAIR_MASS: f64 = 0.01;

const RAW_SUM_RANGE: (f64, f64) = (0.99, 1.01);
const RENORMALIZE_ABOVE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawBin {
    pub lower: f64,
    pub upper: f64,
    pub probability: f64,
    /// 1-based line in the source file.
    pub line: usize,
}

/// One forecaster's histogram for one survey round, as read.
#[derive(Clone, Debug, PartialEq)]
pub struct RawForecast {
    pub date: SurveyQuarter,
    pub forecaster: String,
    /// Sorted by lower edge; contiguous; probabilities sum to one.
    pub bins: Vec<RawBin>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawSurveyTable {
    /// In order of first appearance in the file.
    pub forecasts: Vec<RawForecast>,
}

#[derive(Deserialize)]
struct SurveyRecord {
    survey_date: String,
    forecaster_id: String,
    bin_lower: String,
    bin_upper: String,
    probability: String,
}

#[derive(Deserialize)]
struct RealizationRecord {
    survey_date: String,
    realized_value: String,
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_edge(token: &str, line: usize) -> Result<f64> {
    match token {
        "-inf" => Ok(f64::NEG_INFINITY),
        "inf" => Ok(f64::INFINITY),
        _ => match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(parse_error(line, format!("bad bin edge {token:?}"))),
        },
    }
}

fn parse_finite(token: &str, what: &str, line: usize) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(line, format!("bad {what} {token:?}"))),
    }
}

fn parse_date(token: &str, line: usize) -> Result<SurveyQuarter> {
    token
        .parse()
        .map_err(|_| parse_error(line, format!("bad survey date {token:?}, expected YYYY-Qn")))
}

fn reader_with_header<R: Read>(reader: R, expected: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(expected.iter().copied()) {
        return Err(parse_error(
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(rdr)
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

impl RawSurveyTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = reader_with_header(reader, &SURVEY_HEADER)?;
        let mut index: HashMap<(SurveyQuarter, String), usize> = HashMap::new();
        let mut forecasts: Vec<RawForecast> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record_line(&record);
            let row: SurveyRecord = record.deserialize(None)?;
            let date = parse_date(&row.survey_date, line)?;
            if row.forecaster_id.is_empty() {
                return Err(parse_error(line, "empty forecaster_id"));
            }
            let lower = parse_edge(&row.bin_lower, line)?;
            let upper = parse_edge(&row.bin_upper, line)?;
            if !(lower < upper) {
                return Err(parse_error(line, format!("bin ({lower}, {upper}] is empty")));
            }
            let probability = parse_finite(&row.probability, "probability", line)?;
            if probability < 0.0 {
                return Err(parse_error(line, format!("negative probability {probability}")));
            }
            let bin = RawBin {
                lower,
                upper,
                probability,
                line,
            };
            let slot = *index.entry((date, row.forecaster_id.clone())).or_insert_with(|| {
                forecasts.push(RawForecast {
                    date,
                    forecaster: row.forecaster_id.clone(),
                    bins: Vec::new(),
                });
                forecasts.len() - 1
            });
            forecasts[slot].bins.push(bin);
        }
        for f in &mut forecasts {
            f.validate_and_normalize()?;
        }
        Ok(Self { forecasts })
    }

    /// Distinct survey dates, ascending.
    pub fn dates(&self) -> Vec<SurveyQuarter> {
        self.forecasts.iter().map(|f| f.date).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Forecaster identifiers in order of first appearance.
    pub fn forecaster_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut ids = Vec::new();
        for f in &self.forecasts {
            if seen.insert(f.forecaster.as_str()) {
                ids.push(f.forecaster.clone());
            }
        }
        ids
    }

    pub fn num_rows(&self) -> usize {
        self.forecasts.iter().map(|f| f.bins.len()).sum()
    }
}

impl RawForecast {
    fn validate_and_normalize(&mut self) -> Result<()> {
        self.bins.sort_by(|a, b| a.lower.total_cmp(&b.lower));
        for pair in self.bins.windows(2) {
            if pair[0].upper != pair[1].lower {
                return Err(parse_error(
                    pair[1].line,
                    format!(
                        "bins of {} at {} are not contiguous: ({}, {}] then ({}, {}]",
                        self.forecaster, self.date, pair[0].lower, pair[0].upper, pair[1].lower, pair[1].upper
                    ),
                ));
            }
        }
        let total: f64 = self.bins.iter().map(|b| b.probability).sum();
        if !(RAW_SUM_RANGE.0..=RAW_SUM_RANGE.1).contains(&total) {
            return Err(parse_error(
                self.bins[0].line,
                format!("probabilities of {} at {} sum to {total}", self.forecaster, self.date),
            ));
        }
        if (total - 1.0).abs() > RENORMALIZE_ABOVE {
            for b in &mut self.bins {
                b.probability /= total;
            }
        }
        Ok(())
    }

    pub fn first_line(&self) -> usize {
        self.bins.iter().map(|b| b.line).min().unwrap_or(0)
    }
}

/// Realized values by survey date.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RealizationTable {
    pub values: BTreeMap<SurveyQuarter, f64>,
}

impl RealizationTable {
    /// Rows with an empty `realized_value` are treated as not yet realized.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = reader_with_header(reader, &REALIZATION_HEADER)?;
        let mut values = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record_line(&record);
            let row: RealizationRecord = record.deserialize(None)?;
            let date = parse_date(&row.survey_date, line)?;
            if row.realized_value.is_empty() {
                continue;
            }
            let v = parse_finite(&row.realized_value, "realized value", line)?;
            if values.insert(date, v).is_some() {
                return Err(parse_error(line, format!("duplicate realization for {date}")));
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, date: SurveyQuarter) -> Option<f64> {
        self.values.get(&date).copied()
    }
}

/// Sums source-bin probabilities into the target bins that contain them.
///
/// Every source bin must lie inside a single target bin; probability is
/// never split across target bins.
pub fn harmonize_bins(forecast: &RawForecast, target: &BinGrid) -> Result<Vec<f64>> {
    let edges = target.edges();
    let mut probs = vec![0.0; target.num_bins()];
    for bin in &forecast.bins {
        let m = edges[1..edges.len() - 1].partition_point(|e| *e <= bin.lower);
        if !(edges[m] <= bin.lower && bin.upper <= edges[m + 1]) {
            return Err(Error::IncompatibleGrid {
                line: bin.line,
                lower: bin.lower,
                upper: bin.upper,
            });
        }
        probs[m] += bin.probability;
    }
    Ok(probs)
}

/// Longest run of consecutive absences; absences before entry and after
/// exit count.
pub fn longest_missing_run(present: &[bool]) -> usize {
    let mut longest = 0;
    let mut run = 0;
    for p in present {
        run = if *p { 0 } else { run + 1 };
        longest = longest.max(run);
    }
    longest
}

/// Keeps the forecasters whose longest run of missed rounds is at most
/// `max_missing_run`. Returns the reduced panel and the excluded identifiers.
pub fn filter_entry_exit(panel: &ForecastPanel, max_missing_run: usize) -> Result<(ForecastPanel, Vec<String>)> {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for k in 0..panel.num_forecasters() {
        let present: Vec<bool> = (0..panel.num_rounds()).map(|t| panel.cell(t, k).is_some()).collect();
        if longest_missing_run(&present) <= max_missing_run {
            kept.push(k);
        } else {
            excluded.push(panel.forecaster_ids()[k].clone());
        }
    }
    Ok((panel.select_forecasters(&kept)?, excluded))
}

/// Splits forecasters into `groups` rank groups by ascending score (ties by
/// index), with group sizes differing by at most one. Returns each
/// forecaster's group.
pub fn rank_groups(scores: &[f64], groups: usize) -> Vec<usize> {
    let n = scores.len();
    let g = groups.min(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b)));
    let (base, extra) = (n / g, n % g);
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for group in 0..g {
        let size = base + usize::from(group < extra);
        for &k in &order[pos..pos + size] {
            assignment[k] = group;
        }
        pos += size;
    }
    assignment
}

fn normalized_average(rows: &[&[f64]]) -> Vec<f64> {
    let m = rows[0].len();
    let mut avg = vec![0.0; m];
    for row in rows {
        for (a, p) in avg.iter_mut().zip(row.iter()) {
            *a += p;
        }
    }
    let total: f64 = avg.iter().sum();
    avg.iter().map(|a| a / total).collect()
}

/// Fills every missing cell.
///
/// In the first round a hole gets the average of all forecasts present in
/// that round. In later rounds forecasters are ranked by their cumulative
/// ranked score over all earlier rounds (filled cells included) and split
/// into `groups` groups; a hole gets the average of the present forecasts in
/// its group, or of all present forecasts if the whole group is missing.
pub fn interpolate_gaps(panel: &ForecastPanel, groups: usize, log: &mut IngestLog) -> Result<ForecastPanel> {
    if groups < 1 {
        return Err(Error::Config("need at least one interpolation group".into()));
    }
    let (grid, ids, dates, mut cells, realizations) = panel.clone().into_parts();
    let k = ids.len();
    let rounds = dates.len();
    let last_hole = (0..rounds).rev().find(|&t| cells[t].iter().any(Option::is_none));
    let Some(last_hole) = last_hole else {
        return Ok(panel.clone());
    };
    let mut cumulative = vec![0.0; k];
    for t in 0..=last_hole {
        let present: Vec<usize> = (0..k).filter(|&j| cells[t][j].is_some()).collect();
        let missing: Vec<usize> = (0..k).filter(|&j| cells[t][j].is_none()).collect();
        if !missing.is_empty() {
            if present.is_empty() {
                return Err(Error::Config(format!("no forecasts at {} to interpolate from", dates[t])));
            }
            let rows_of = |members: &[usize]| -> Vec<Vec<f64>> {
                members.iter().map(|&j| cells[t][j].clone().expect("present")).collect()
            };
            let all_rows = rows_of(&present);
            let all_refs: Vec<&[f64]> = all_rows.iter().map(Vec::as_slice).collect();
            let everyone = normalized_average(&all_refs);
            let assignment = (t > 0).then(|| rank_groups(&cumulative, groups));
            let mut fills = Vec::with_capacity(missing.len());
            for &j in &missing {
                let fill = match &assignment {
                    None => {
                        log.push(format!("{}: filled {} from all {} present forecasts", dates[t], ids[j], present.len()));
                        everyone.clone()
                    }
                    Some(a) => {
                        let donors: Vec<usize> = present.iter().copied().filter(|&d| a[d] == a[j]).collect();
                        if donors.is_empty() {
                            log.push(format!(
                                "{}: group {} of {} has no forecasts; filled from all {} present forecasts",
                                dates[t],
                                a[j] + 1,
                                ids[j],
                                present.len()
                            ));
                            everyone.clone()
                        } else {
                            log.push(format!(
                                "{}: filled {} from group {} ({} forecasts)",
                                dates[t],
                                ids[j],
                                a[j] + 1,
                                donors.len()
                            ));
                            let rows = rows_of(&donors);
                            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
                            normalized_average(&refs)
                        }
                    }
                };
                fills.push((j, fill));
            }
            for (j, fill) in fills {
                cells[t][j] = Some(fill);
            }
        }
        if t < last_hole {
            let y = realizations[t].ok_or_else(|| Error::MissingRealization(dates[t].to_string()))?;
            let bin = grid.locate(y)?;
            for (c, cell) in cumulative.iter_mut().zip(&cells[t]) {
                *c += ranked_score_at(cell.as_ref().expect("round is complete"), bin);
            }
        }
    }
    ForecastPanel::new(grid, ids, dates, cells, realizations)
}

/// Result of [`repair_zero_probability`].
#[derive(Clone, Debug, PartialEq)]
pub struct Repair {
    pub forecast: HistogramForecast,
    pub changed: bool,
    /// Some donor bin held less than its equal share and gave everything it had.
    pub capped: bool,
}

/// Gives the realized bin probability [`REPAIR_MASS`] when it had zero,
/// taking equal shares from the bins with positive probability.
///
/// If a donor holds less than its share it gives all it has and the
/// shortfall is spread equally over the remaining donors.
pub fn repair_zero_probability(f: &HistogramForecast, realized_bin: usize) -> Result<Repair> {
    let probs = f.probs();
    if realized_bin >= probs.len() {
        return Err(Error::Dimension {
            expected: probs.len(),
            got: realized_bin,
        });
    }
    if probs[realized_bin] > 0.0 {
        return Ok(Repair {
            forecast: f.clone(),
            changed: false,
            capped: false,
        });
    }
    let mut donors: Vec<f64> = probs.iter().copied().filter(|p| *p > 0.0).collect();
    donors.sort_by(f64::total_cmp);
    // water level: each donor gives min(p, level), for a total of REPAIR_MASS
    let mut remaining = REPAIR_MASS;
    let mut level = 0.0;
    for (i, p) in donors.iter().enumerate() {
        let share = remaining / (donors.len() - i) as f64;
        if *p < share {
            remaining -= p;
        } else {
            level = share;
            break;
        }
    }
    let capped = donors.first().is_some_and(|p| *p < level) || level == 0.0;
    let repaired: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(m, p)| {
            if m == realized_bin {
                REPAIR_MASS
            } else if *p > 0.0 {
                p - p.min(level)
            } else {
                0.0
            }
        })
        .collect();
    Ok(Repair {
        forecast: HistogramForecast::new(Arc::clone(f.grid()), repaired)?,
        changed: true,
        capped,
    })
}

/// Appends the forecaster with probability `1/M` in every bin, unless it is
/// already present.
pub fn add_uniform_forecaster(panel: &ForecastPanel) -> Result<ForecastPanel> {
    if panel.forecaster_ids().iter().any(|id| id == UNIFORM_ID) {
        return Ok(panel.clone());
    }
    let (grid, mut ids, dates, mut cells, realizations) = panel.clone().into_parts();
    let m = grid.num_bins();
    ids.push(UNIFORM_ID.to_string());
    for row in &mut cells {
        row.push(Some(vec![1.0 / m as f64; m]));
    }
    ForecastPanel::new(grid, ids, dates, cells, realizations)
}

/// Processing log written next to an ingested panel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestLog {
    pub entries: Vec<String>,
}

impl IngestLog {
    pub fn push(&mut self, entry: impl Into<String>) {
        self.entries.push(entry.into());
    }
}

impl fmt::Display for IngestLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestConfig {
    pub max_missing_run: usize,
    pub groups: usize,
    pub add_uniform: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            max_missing_run: 4,
            groups: 5,
            add_uniform: true,
        }
    }
}

/// Places every raw forecast on `target`, keeping forecasters in order of
/// first appearance and rounds in date order. Missing cells stay `None`.
pub fn build_panel(raw: &RawSurveyTable, realizations: &RealizationTable, target: Arc<BinGrid>) -> Result<ForecastPanel> {
    let dates = raw.dates();
    let ids = raw.forecaster_ids();
    let id_index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut cells = vec![vec![None; ids.len()]; dates.len()];
    for f in &raw.forecasts {
        let t = dates.binary_search(&f.date).expect("date is listed");
        cells[t][id_index[f.forecaster.as_str()]] = Some(harmonize_bins(f, &target)?);
    }
    let realized = dates.iter().map(|d| realizations.get(*d)).collect();
    ForecastPanel::new(target, ids, dates, cells, realized)
}

/// Reads an already harmonized panel; the grid is taken from the first
/// forecast in the file.
pub fn load_panel(raw: &RawSurveyTable, realizations: &RealizationTable) -> Result<ForecastPanel> {
    let first = raw
        .forecasts
        .first()
        .ok_or_else(|| parse_error(1, "panel file has no forecasts"))?;
    let mut edges: Vec<f64> = first.bins.iter().map(|b| b.lower).collect();
    edges.push(first.bins.last().expect("forecasts have bins").upper);
    build_panel(raw, realizations, Arc::new(BinGrid::new(edges)?))
}

/// The full ingestion pipeline: harmonize, filter, interpolate, repair and
/// add the uniform forecaster. Running it on its own output changes nothing.
pub fn run_pipeline(
    raw: &RawSurveyTable,
    realizations: &RealizationTable,
    target: Arc<BinGrid>,
    config: &IngestConfig,
) -> Result<(ForecastPanel, IngestLog)> {
    let mut log = IngestLog::default();
    log.push(format!(
        "read {} rows: {} forecasts by {} forecasters over {} rounds",
        raw.num_rows(),
        raw.forecasts.len(),
        raw.forecaster_ids().len(),
        raw.dates().len()
    ));
    let mut bin_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for f in &raw.forecasts {
        *bin_counts.entry(f.bins.len()).or_default() += 1;
    }
    log.push(format!(
        "source grids (bins: forecasts): {}; harmonized to {} bins",
        bin_counts.iter().map(|(b, n)| format!("{b}: {n}")).collect::<Vec<_>>().join(", "),
        target.num_bins()
    ));
    let panel = build_panel(raw, realizations, target)?;

    let (panel, excluded) = filter_entry_exit(&panel, config.max_missing_run)?;
    log.push(format!(
        "kept {} forecasters with at most {} consecutive missed rounds; excluded {}: [{}]",
        panel.num_forecasters(),
        config.max_missing_run,
        excluded.len(),
        excluded.join(", ")
    ));

    let holes = (0..panel.num_rounds())
        .map(|t| (0..panel.num_forecasters()).filter(|&k| panel.cell(t, k).is_none()).count())
        .sum::<usize>();
    log.push(format!("interpolating {holes} missing forecasts"));
    let panel = interpolate_gaps(&panel, config.groups, &mut log)?;

    let (grid, ids, dates, mut cells, realized) = panel.into_parts();
    let mut repaired = 0;
    for (t, row) in cells.iter_mut().enumerate() {
        let Some(y) = realized[t] else {
            log.push(format!("{}: no realization, zero-probability repair skipped", dates[t]));
            continue;
        };
        let bin = grid.locate(y)?;
        for (k, cell) in row.iter_mut().enumerate() {
            let probs = cell.take().expect("interpolation completed the panel");
            let f = HistogramForecast::new(Arc::clone(&grid), probs)?;
            let fix = repair_zero_probability(&f, bin)?;
            if fix.changed {
                repaired += 1;
                log.push(format!(
                    "{}: repaired zero probability of {} at realized bin {}{}",
                    dates[t],
                    ids[k],
                    bin + 1,
                    if fix.capped { " (donor shares capped)" } else { "" }
                ));
            }
            *cell = Some(fix.forecast.into_probs());
        }
    }
    log.push(format!("repaired {repaired} zero-probability realizations"));
    let mut panel = ForecastPanel::new(grid, ids, dates, cells, realized)?;

    if config.add_uniform {
        let before = panel.num_forecasters();
        panel = add_uniform_forecaster(&panel)?;
        if panel.num_forecasters() > before {
            log.push(format!("added forecaster {UNIFORM_ID:?}"));
        }
    }
    log.push(format!(
        "panel: {} forecasters x {} rounds on {} bins",
        panel.num_forecasters(),
        panel.num_rounds(),
        panel.grid().num_bins()
    ));
    Ok((panel, log))
}

fn format_edge(e: f64) -> String {
    if e == f64::INFINITY {
        "inf".into()
    } else if e == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        e.to_string()
    }
}

/// Writes every present cell in survey-row format, rounds in date order and
/// forecasters in panel order.
pub fn write_panel<W: Write>(panel: &ForecastPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SURVEY_HEADER)?;
    let grid = panel.grid();
    for t in 0..panel.num_rounds() {
        let date = panel.dates()[t].to_string();
        for k in 0..panel.num_forecasters() {
            let Some(probs) = panel.cell(t, k) else { continue };
            for (m, p) in probs.iter().enumerate() {
                let (lo, hi) = grid.bin(m);
                w.write_record([
                    date.as_str(),
                    panel.forecaster_ids()[k].as_str(),
                    &format_edge(lo),
                    &format_edge(hi),
                    &p.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_realizations<W: Write>(table: &RealizationTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REALIZATION_HEADER)?;
    for (date, v) in &table.values {
        w.write_record([date.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
