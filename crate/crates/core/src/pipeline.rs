//! End-to-end runs: detection on tick records and Monte Carlo size/power
//! experiments on simulated days.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critval::{critical_value, fit_ar1_values, simulate_max_quantiles, CriticalValueTable, TableAxes};
use crate::detector::{extract_events_with, max_stat, tstat_grid, BurstEvent, DedupPolicy, DetectorConfig, TStatSeries};
use crate::error::{Error, Result};
use crate::ingest::{build_midquote, SessionWindow, TickRecord};
use crate::parametric::{fit_mle, ParamFit};
use crate::series::TickSeries;
use crate::simulator::{simulate_day, BurstParams, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Fixed(f64),
    /// Simulated critical value of the day's maximum at this level, with
    /// rho fitted to the day's t-statistics.
    Critval(f64),
}

impl Default for ThresholdSource {
    fn default() -> Self {
        ThresholdSource::Fixed(4.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub detector: DetectorConfig,
    /// Without a session the whole input is one day starting at its first
    /// record.
    #[serde(default)]
    pub session: Option<SessionWindow>,
    #[serde(default = "default_spacing")]
    pub grid_spacing: f64,
    #[serde(default)]
    pub threshold: ThresholdSource,
    #[serde(default = "default_dedup")]
    pub dedup: DedupPolicy,
    #[serde(default)]
    pub seed: u64,
    /// Replications behind a critval threshold.
    #[serde(default = "default_crit_sims")]
    pub crit_sims: usize,
}

fn default_spacing() -> f64 {
    5.0
}
fn default_dedup() -> DedupPolicy {
    DedupPolicy::MinSeparation(300.0)
}
fn default_crit_sims() -> usize {
    20_000
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            session: None,
            grid_spacing: default_spacing(),
            threshold: ThresholdSource::default(),
            dedup: default_dedup(),
            seed: 0,
            crit_sims: default_crit_sims(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if !(self.grid_spacing > 0.0 && self.grid_spacing.is_finite()) {
            return Err(Error::Config(format!("grid_spacing must be positive, got {}", self.grid_spacing)));
        }
        if let Some(s) = &self.session {
            s.validate()?;
        }
        match self.threshold {
            ThresholdSource::Fixed(x) if !(x > 0.0) => Err(Error::Config(format!("threshold must be positive, got {x}"))),
            ThresholdSource::Critval(p) if !(p > 0.0 && p < 1.0) => Err(Error::Config(format!("critval level must lie in (0, 1), got {p}"))),
            _ => Ok(()),
        }
    }
}

/// Moments of the pooled t-values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TStatSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub excess_kurtosis: f64,
    /// Distance between the 5% and 95% quantiles over that of a standard normal.
    pub sigma_q: f64,
}

pub fn summarize(values: &[f64]) -> Option<TStatSummary> {
    let n = values.len();
    if n < 4 {
        return None;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m4 = values.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| crate::critval::empirical_quantile(&sorted, p);
    let z95 = 1.644_853_626_951_472_2;
    Some(TStatSummary {
        count: n,
        mean,
        std: (m2 * nf / (nf - 1.0)).sqrt(),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        sigma_q: (q(0.95) - q(0.05)) / (2.0 * z95),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    /// Local day number, or 0 without a session.
    pub day: i64,
    pub origin_ms: i64,
    pub observations: usize,
    pub m: usize,
    pub t_star: Option<f64>,
    pub rho_hat: Option<f64>,
    pub threshold: f64,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub config: RunConfig,
    pub days: Vec<DayReport>,
    pub events: Vec<BurstEvent>,
    pub summary: Option<TStatSummary>,
}

/// One processed day with its full t-statistic series.
#[derive(Debug, Clone)]
pub struct DayOutput {
    pub report: DayReport,
    pub tstats: TStatSeries<f64>,
    pub events: Vec<BurstEvent>,
}

fn day_threshold(cfg: &RunConfig, tstats: &TStatSeries<f64>, m: usize) -> Result<(f64, Option<f64>)> {
    let rho = fit_ar1_values(&tstats.t_values).ok().map(|f| f.rho_hat);
    match cfg.threshold {
        ThresholdSource::Fixed(x) => Ok((x, rho)),
        ThresholdSource::Critval(level) => {
            let r = rho.ok_or_else(|| Error::Numerical("too few t-values to fit the AR(1) for a critical value".into()))?;
            if m < 2 {
                return Err(Error::Numerical("fewer than two t-values in the day".into()));
            }
            let q = simulate_max_quantiles(m, r.max(0.0), &[level], cfg.crit_sims, 0, cfg.seed)?;
            Ok((q[0], rho))
        }
    }
}

fn detect_day(cfg: &RunConfig, day: i64, origin_ms: i64, records: &[TickRecord]) -> Result<DayOutput> {
    let series = build_midquote(records, origin_ms)?;
    let tstats = tstat_grid(&series, cfg.grid_spacing, &cfg.detector)
        .map_err(|e| annotate(e, &format!("day {day}")))?;
    let m = tstats.count_present();
    let t_star = max_stat(&tstats).ok().map(|s| s.t_star);
    let (threshold, rho_hat) = day_threshold(cfg, &tstats, m)?;
    let mut events = extract_events_with(&tstats, threshold, &cfg.dedup)?;
    for e in &mut events {
        e.peak_time += (origin_ms as f64) / 1000.0;
    }
    Ok(DayOutput {
        report: DayReport { day, origin_ms, observations: series.len(), m, t_star, rho_hat, threshold, events: events.len() },
        tstats,
        events,
    })
}

fn annotate(e: Error, ctx: &str) -> Error {
    match e {
        Error::Input(s) => Error::Input(format!("{ctx}: {s}")),
        Error::Numerical(s) => Error::Numerical(format!("{ctx}: {s}")),
        other => other,
    }
}

/// Runs detection day by day. Event peak times are in seconds since the
/// epoch; t-statistic grid times are seconds after each day's origin.
pub fn run_detect_days(cfg: &RunConfig, records: &[TickRecord]) -> Result<Vec<DayOutput>> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Input("no tick records".into()));
    }
    let days: Vec<(i64, i64, Vec<TickRecord>)> = match &cfg.session {
        Some(s) => s
            .split(records)
            .into_iter()
            .map(|(d, recs)| (d, s.open_ms(d), recs.into_iter().copied().collect()))
            .collect(),
        None => vec![(0, records[0].ts_ms, records.to_vec())],
    };
    days.par_iter()
        .map(|(d, origin, recs)| detect_day(cfg, *d, *origin, recs))
        .collect()
}

pub fn assemble_report(cfg: &RunConfig, days: &[DayOutput]) -> DetectReport {
    let pooled: Vec<f64> = days.iter().flat_map(|d| d.tstats.present().map(|(_, v)| v)).collect();
    DetectReport {
        config: cfg.clone(),
        days: days.iter().map(|d| d.report.clone()).collect(),
        events: days.iter().flat_map(|d| d.events.iter().copied()).collect(),
        summary: summarize(&pooled),
    }
}

pub fn run_detect(cfg: &RunConfig, records: &[TickRecord]) -> Result<DetectReport> {
    Ok(assemble_report(cfg, &run_detect_days(cfg, records)?))
}

impl DetectReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One (alpha, beta, h) cell of a size/power study. `alpha = None` means
/// no drift burst, `beta = None` no volatility burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentCell {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    pub h_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario without bursts; each cell adds its own.
    #[serde(default = "ScenarioSpec::study_null")]
    pub scenario: ScenarioSpec,
    pub cells: Vec<ExperimentCell>,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Grid spacing in seconds.
    #[serde(default = "default_exp_spacing")]
    pub grid_spacing: f64,
    #[serde(default = "default_exp_burn_in")]
    pub burn_in: f64,
    /// Volatility bandwidth as a multiple of the drift bandwidth.
    #[serde(default = "default_h_ratio")]
    pub h_ratio: f64,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Drift and volatility burst scales.
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub same_brownian: bool,
    #[serde(default = "default_table_sims")]
    pub table_sims: usize,
    #[serde(default = "default_rho_axis")]
    pub rho_axis: Vec<f64>,
}

fn default_exp_spacing() -> f64 {
    60.0
}
fn default_exp_burn_in() -> f64 {
    3000.0
}
fn default_h_ratio() -> f64 {
    5.0
}
fn default_levels() -> Vec<f64> {
    vec![0.95, 0.99, 0.995]
}
fn default_a() -> f64 {
    3.0
}
fn default_b() -> f64 {
    0.15
}
fn default_table_sims() -> usize {
    100_000
}
fn default_rho_axis() -> Vec<f64> {
    let mut v: Vec<f64> = (0..=16).map(|i| i as f64 * 0.05).collect();
    v.extend([0.825, 0.85, 0.875, 0.9, 0.925, 0.95, 0.975, 0.99]);
    v
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn new(cells: Vec<ExperimentCell>, replications: usize, seed: u64) -> Self {
        Self {
            scenario: ScenarioSpec::study_null(),
            cells,
            replications,
            seed,
            grid_spacing: default_exp_spacing(),
            burn_in: default_exp_burn_in(),
            h_ratio: default_h_ratio(),
            levels: default_levels(),
            a: default_a(),
            b: default_b(),
            same_brownian: false,
            table_sims: default_table_sims(),
            rho_axis: default_rho_axis(),
        }
    }

    pub fn detector(&self, h_mean: f64) -> DetectorConfig {
        DetectorConfig { burn_in: Some(self.burn_in), ..DetectorConfig::with_bandwidths(h_mean, self.h_ratio * h_mean) }
    }

    /// Scenario of one cell.
    pub fn cell_scenario(&self, cell: &ExperimentCell) -> ScenarioSpec {
        let burst = match (cell.alpha, cell.beta) {
            (None, None) => None,
            (alpha, beta) => Some(BurstParams {
                same_brownian: self.same_brownian,
                ..BurstParams::new(
                    if alpha.is_some() { self.a } else { 0.0 },
                    alpha.unwrap_or(0.5),
                    if beta.is_some() { self.b } else { 0.0 },
                    beta.unwrap_or(0.0),
                )
            }),
        };
        ScenarioSpec { burst, ..self.scenario.clone() }
    }

    /// Number of grid points after the burn-in.
    pub fn grid_points(&self) -> usize {
        let span = self.scenario.session_seconds - self.burn_in;
        (span / self.grid_spacing + 1e-9).floor() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 || self.cells.is_empty() {
            return Err(Error::Config("an experiment needs cells and replications".into()));
        }
        if self.replications < 100 {
            log::warn!("only {} replications per cell", self.replications);
        }
        self.scenario.validate()?;
        for c in &self.cells {
            self.detector(c.h_mean).validate()?;
            self.cell_scenario(c).validate()?;
        }
        Ok(())
    }

    pub fn build_table(&self) -> Result<CriticalValueTable> {
        let axes = TableAxes { m: vec![self.grid_points()], rho: self.rho_axis.clone(), level: self.levels.clone() };
        CriticalValueTable::build(axes, self.table_sims, 0, self.seed)
    }
}

/// Outcome of one simulated day in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub m: usize,
    pub t_star: f64,
    pub rho_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub cell: ExperimentCell,
    pub replications: usize,
    pub failed: usize,
    pub mean_rho: f64,
    /// Rejection frequency per level, in the order of `levels`.
    pub rejection: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub levels: Vec<f64>,
    pub rows: Vec<ExperimentRow>,
}

/// Seed of replication `r`; shared across cells so they differ only in
/// the burst.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64)
}

/// Simulates one day of a cell and returns its maximum statistic.
pub fn run_replication(cfg: &ExperimentConfig, cell: &ExperimentCell, seed: u64) -> Result<Replication> {
    let spec = cfg.cell_scenario(cell);
    let day = simulate_day(&spec, seed)?;
    let series = day.series(spec.origin_ms)?;
    let ts = tstat_grid(&series, cfg.grid_spacing, &cfg.detector(cell.h_mean))?;
    let ms = max_stat(&ts)?;
    let rho = fit_ar1_values(&ts.t_values)?.rho_hat;
    Ok(Replication { seed, m: ms.m, t_star: ms.t_star, rho_hat: rho })
}

pub fn run_cell(cfg: &ExperimentConfig, cell: &ExperimentCell, table: &CriticalValueTable) -> Result<(ExperimentRow, Vec<Replication>)> {
    let reps: Vec<Result<Replication>> =
        (0..cfg.replications).into_par_iter().map(|r| run_replication(cfg, cell, replication_seed(cfg.seed, r))).collect();
    let mut ok = Vec::with_capacity(reps.len());
    let mut failed = 0;
    for r in reps {
        match r {
            Ok(x) => ok.push(x),
            Err(e) if e.is_numerical() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if ok.is_empty() {
        return Err(Error::Numerical("every replication failed".into()));
    }
    let (lo, hi) = (cfg.rho_axis[0], cfg.rho_axis[cfg.rho_axis.len() - 1]);
    let mut hits = vec![0usize; cfg.levels.len()];
    for rep in &ok {
        let m = rep.m.clamp(2, cfg.grid_points());
        let rho = rep.rho_hat.clamp(lo, hi);
        for (l, &level) in cfg.levels.iter().enumerate() {
            let cv = if m == cfg.grid_points() {
                critical_value(table, m, rho, level)?
            } else {
                simulate_max_quantiles(m, rho, &[level], cfg.table_sims.min(20_000), 0, cfg.seed)?[0]
            };
            if rep.t_star > cv {
                hits[l] += 1;
            }
        }
    }
    let n = ok.len() as f64;
    let row = ExperimentRow {
        cell: *cell,
        replications: ok.len(),
        failed,
        mean_rho: ok.iter().map(|r| r.rho_hat).sum::<f64>() / n,
        rejection: hits.iter().map(|&h| h as f64 / n).collect(),
    };
    Ok((row, ok))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let table = cfg.build_table()?;
    let rows = cfg.cells.iter().map(|c| run_cell(cfg, c, &table).map(|r| r.0)).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { levels: cfg.levels.clone(), rows })
}

impl ExperimentReport {
    /// One row per cell: `h_mean,alpha,beta,replications,failed,mean_rho`
    /// and a `reject_<level>` column per level, in percent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["h_mean".to_string(), "alpha".into(), "beta".into(), "replications".into(), "failed".into(), "mean_rho".into()];
        header.extend(self.levels.iter().map(|l| format!("reject_{l}")));
        wtr.write_record(&header)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.cell.h_mean.to_string(),
                opt(r.cell.alpha),
                opt(r.cell.beta),
                r.replications.to_string(),
                r.failed.to_string(),
                format!("{:.4}", r.mean_rho),
            ];
            rec.extend(r.rejection.iter().map(|x| format!("{:.1}", 100.0 * x)));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Fits the local parametric model to the log-prices observed in
/// `[end - window, end)` (seconds after the series origin), with the
/// explosion at `end`.
pub fn fit_event(series: &TickSeries<f64>, end: f64, window: f64) -> Result<ParamFit> {
    if !(window > 0.0) {
        return Err(Error::Config(format!("window must be positive, got {window}")));
    }
    let lo = series.times().partition_point(|&t| t < end - window);
    let hi = series.times().partition_point(|&t| t < end);
    let times = &series.times()[lo..hi];
    let levels = &series.log_prices()[lo..hi];
    if times.len() < 2 {
        return Err(Error::Input(format!("no observations in [{}, {end})", end - window)));
    }
    let inc: Vec<f64> = levels.windows(2).map(|w| w[1] - w[0]).collect();
    fit_mle(times, &inc, end)
}
