//! The drift burst t-statistic on a grid, the maximum statistic with its
//! Gumbel normalization, and burst event extraction.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    effective_lags, spot_drift, spot_lrv, spot_variance_raw, LagPolicy, NeweyWestConstants,
};
use crate::kernel::{kernel_k2, parzen, KernelSpec, ParzenWindow};
use crate::preavg::{preaverage_levels, PreAvgConfig};
use crate::rolling::DecayingSum;
use crate::scalar::Scalar;
use crate::series::TickSeries;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatMode {
    /// Pre-averaged increments, HAC denominator.
    #[default]
    NoiseRobust,
    /// Raw increments, `sqrt(h/K_2) μ̂ / σ̂`.
    NoiseFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    #[serde(default)]
    pub kernel: KernelSpec,
    /// Drift bandwidth in seconds.
    pub h_mean: f64,
    /// Volatility bandwidth in seconds.
    pub h_var: f64,
    #[serde(default)]
    pub preavg: PreAvgConfig,
    pub lags: LagPolicy,
    #[serde(default)]
    pub newey_west: NeweyWestConstants,
    #[serde(default)]
    pub mode: StatMode,
    /// Seconds from the first observation before the grid starts reporting.
    /// Defaults to one volatility bandwidth.
    #[serde(default)]
    pub burn_in: Option<f64>,
    /// A grid point needs a price update within this many seconds.
    /// Defaults to the grid spacing.
    #[serde(default)]
    pub revision_lookback: Option<f64>,
    /// Long-run variance at or below this value yields a missing t-value.
    #[serde(default = "default_lrv_floor")]
    pub lrv_floor: f64,
}

fn default_lrv_floor() -> f64 {
    1e-24
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::with_bandwidths(300.0, 1500.0)
    }
}

impl DetectorConfig {
    /// Noise-robust defaults with `k_n = 3` and automatic lags.
    pub fn with_bandwidths(h_mean: f64, h_var: f64) -> Self {
        let preavg = PreAvgConfig::new(3);
        Self {
            kernel: KernelSpec::default(),
            h_mean,
            h_var,
            preavg,
            lags: LagPolicy::auto_for(preavg.k_n),
            newey_west: NeweyWestConstants::default(),
            mode: StatMode::NoiseRobust,
            burn_in: None,
            revision_lookback: None,
            lrv_floor: default_lrv_floor(),
        }
    }

    /// Raw-increment statistic with a single bandwidth for both estimators.
    pub fn noise_free(h: f64) -> Self {
        Self {
            mode: StatMode::NoiseFree,
            preavg: PreAvgConfig::new(1),
            lags: LagPolicy::Fixed(0),
            ..Self::with_bandwidths(h, h)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.preavg.validate()?;
        for (name, v) in [("h_mean", self.h_mean), ("h_var", self.h_var)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(b) = self.burn_in {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("burn_in must be non-negative, got {b}")));
            }
        }
        if let Some(l) = self.revision_lookback {
            if !(l > 0.0) {
                return Err(Error::Config(format!("revision_lookback must be positive, got {l}")));
            }
        }
        if !(self.lrv_floor >= 0.0) {
            return Err(Error::Config(format!("lrv_floor must be non-negative, got {}", self.lrv_floor)));
        }
        Ok(())
    }

    pub fn burn_in_seconds(&self) -> f64 {
        self.burn_in.unwrap_or(self.h_var)
    }
}

/// Increments ready for estimation: pre-averaged (or raw) values stamped
/// with the time of the last price level they use.
#[derive(Debug, Clone)]
pub struct DetectorInput<T> {
    cfg: DetectorConfig,
    times: Vec<T>,
    values: Vec<T>,
    lags: usize,
}

impl<T: Scalar> DetectorInput<T> {
    pub fn new(series: &TickSeries<T>, cfg: &DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let k = match cfg.mode {
            StatMode::NoiseRobust => cfg.preavg.k_n,
            StatMode::NoiseFree => 1,
        };
        if series.len() < k + 1 {
            return Err(Error::Input(format!(
                "series has {} observations, need at least {}",
                series.len(),
                k + 1
            )));
        }
        let values = match cfg.mode {
            StatMode::NoiseRobust => preaverage_levels(series.log_prices(), &cfg.preavg)?,
            StatMode::NoiseFree => series.increments(),
        };
        let times = series.times()[k..].to_vec();
        debug_assert_eq!(times.len(), values.len());
        let lags = match cfg.mode {
            StatMode::NoiseRobust => cfg.lags.resolve(&series.increments(), &cfg.newey_west)?,
            StatMode::NoiseFree => 0,
        };
        Ok(Self { cfg: cfg.clone(), times, values, lags })
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn combine(&self, drift_sum: T, denom: T) -> Option<(T, T, T)> {
        let h = T::of(self.cfg.h_mean);
        let mu = drift_sum / h;
        if !(denom > T::of(self.cfg.lrv_floor)) || !denom.is_finite() {
            return None;
        }
        let t = match self.cfg.mode {
            StatMode::NoiseRobust => h.sqrt() * mu / denom.sqrt(),
            StatMode::NoiseFree => (h / T::of(kernel_k2(&self.cfg.kernel))).sqrt() * mu / denom.sqrt(),
        };
        t.is_finite().then_some((t, mu, denom))
    }

    /// t-statistic, drift and denominator variance at `t`, by direct summation.
    pub fn estimate_at(&self, t: T) -> Result<Option<(T, T, T)>> {
        let cfg = &self.cfg;
        let h = T::of(cfg.h_mean);
        let hv = T::of(cfg.h_var);
        let mu = match spot_drift(&self.times, &self.values, t, h, &cfg.kernel) {
            Ok(m) => m,
            Err(Error::EmptyWindow(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let denom = match cfg.mode {
            StatMode::NoiseRobust => spot_lrv(&self.times, &self.values, t, hv, &cfg.kernel, self.lags, &ParzenWindow),
            StatMode::NoiseFree => spot_variance_raw(&self.times, &self.values, t, hv, &cfg.kernel).map(|s| s * s),
        };
        match denom {
            Ok(d) => Ok(self.combine(mu * h, d)),
            Err(Error::EmptyWindow(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Rolling evaluation over sorted grid points.
    fn estimate_sorted(&self, points: &[T]) -> Vec<Option<(T, T, T)>> {
        let cfg = &self.cfg;
        let radius = T::of(cfg.kernel.truncation_radius);
        let h = T::of(cfg.h_mean);
        let hv = T::of(cfg.h_var);
        let mut drift = DecayingSum::linear(&self.times, &self.values, T::one() / h, radius * h);
        let mut out = Vec::with_capacity(points.len());
        match cfg.mode {
            StatMode::NoiseRobust => {
                let mut lagged: Vec<DecayingSum<T>> = (0..=self.lags)
                    .map(|l| DecayingSum::lagged(&self.times, &self.values, l, T::of(2.0) / hv, radius * hv))
                    .collect();
                for &t in points {
                    drift.advance(t);
                    lagged.iter_mut().for_each(|s| s.advance(t));
                    let n_eff = lagged[0].count();
                    if drift.count() == 0 || n_eff == 0 {
                        out.push(None);
                        continue;
                    }
                    let l_eff = effective_lags(self.lags, n_eff);
                    let mut total = lagged[0].value();
                    for (l, s) in lagged.iter().enumerate().take(l_eff + 1).skip(1) {
                        let w = parzen(T::of(l as f64) / T::of(l_eff as f64));
                        total = total + T::of(2.0) * w * s.value();
                    }
                    out.push(self.combine(drift.value(), total / hv));
                }
            }
            StatMode::NoiseFree => {
                let mut var = DecayingSum::lagged(&self.times, &self.values, 0, T::one() / hv, radius * hv);
                for &t in points {
                    drift.advance(t);
                    var.advance(t);
                    if drift.count() == 0 || var.count() == 0 {
                        out.push(None);
                        continue;
                    }
                    out.push(self.combine(drift.value(), var.value() / hv));
                }
            }
        }
        out
    }
}

/// t-statistic at a single time; `None` when the window is empty or the
/// variance estimate is at the floor.
pub fn tstat_at<T: Scalar>(series: &TickSeries<T>, t: T, cfg: &DetectorConfig) -> Result<Option<T>> {
    let input = DetectorInput::new(series, cfg)?;
    Ok(input.estimate_at(t)?.map(|(v, _, _)| v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TStatSeries<T> {
    pub grid_times: Vec<T>,
    pub t_values: Vec<Option<T>>,
    pub mu_hats: Vec<Option<T>>,
    pub lrv_hats: Vec<Option<T>>,
    pub grid_spacing: f64,
    pub lags_used: usize,
    pub config: DetectorConfig,
}

const GRID_CHUNK: usize = 512;

/// Evaluates the statistic on a regular grid starting at the first
/// observation. Points inside the burn-in or without a price update in the
/// preceding lookback are missing.
pub fn tstat_grid<T: Scalar>(series: &TickSeries<T>, grid_spacing: f64, cfg: &DetectorConfig) -> Result<TStatSeries<T>> {
    if !(grid_spacing > 0.0 && grid_spacing.is_finite()) {
        return Err(Error::Config(format!("grid spacing must be positive, got {grid_spacing}")));
    }
    if series.is_empty() {
        return Err(Error::Input("cannot evaluate the statistic on an empty series".into()));
    }
    let input = DetectorInput::new(series, cfg)?;
    let t0 = series.times()[0];
    let last = series.times()[series.len() - 1];
    let span = (last - t0).f64();
    let count = (span / grid_spacing + 1e-9).floor() as usize + 1;
    let grid: Vec<T> = (0..count).map(|j| t0 + T::of(j as f64 * grid_spacing)).collect();
    let burn_in = cfg.burn_in_seconds();
    let lookback = T::of(cfg.revision_lookback.unwrap_or(grid_spacing));
    let active: Vec<bool> = grid
        .iter()
        .enumerate()
        .map(|(j, &t)| j as f64 * grid_spacing >= burn_in - 1e-9 && series.updated_within(t, lookback))
        .collect();

    let chunks: Vec<Vec<Option<(T, T, T)>>> = grid
        .par_chunks(GRID_CHUNK)
        .zip(active.par_chunks(GRID_CHUNK))
        .map(|(pts, act)| {
            let wanted: Vec<T> = pts.iter().zip(act).filter(|(_, &a)| a).map(|(&t, _)| t).collect();
            let mut est = input.estimate_sorted(&wanted).into_iter();
            act.iter().map(|&a| if a { est.next().flatten() } else { None }).collect()
        })
        .collect();

    let mut t_values = Vec::with_capacity(count);
    let mut mu_hats = Vec::with_capacity(count);
    let mut lrv_hats = Vec::with_capacity(count);
    for e in chunks.into_iter().flatten() {
        t_values.push(e.map(|x| x.0));
        mu_hats.push(e.map(|x| x.1));
        lrv_hats.push(e.map(|x| x.2));
    }
    Ok(TStatSeries {
        grid_times: grid,
        t_values,
        mu_hats,
        lrv_hats,
        grid_spacing,
        lags_used: input.lags(),
        config: cfg.clone(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn parse_opt(s: &str, col: &str, row: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Input(format!("row {row}: cannot parse {col} value {s:?}")))
}

impl<T: Scalar> TStatSeries<T> {
    pub fn len(&self) -> usize {
        self.grid_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_times.is_empty()
    }

    /// `(time, t)` pairs of non-missing entries.
    pub fn present(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.grid_times.iter().zip(&self.t_values).filter_map(|(&s, v)| v.map(|v| (s, v)))
    }

    pub fn count_present(&self) -> usize {
        self.t_values.iter().filter(|v| v.is_some()).count()
    }

    /// Writes `time,t,mu_hat,lrv_hat` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,t,mu_hat,lrv_hat")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_opt(Some(self.grid_times[i].f64())),
                fmt_opt(self.t_values[i].map(|v| v.f64())),
                fmt_opt(self.mu_hats[i].map(|v| v.f64())),
                fmt_opt(self.lrv_hats[i].map(|v| v.f64())),
            )?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`TStatSeries::write_csv`]; the
    /// configuration is not part of the file and must be supplied.
    pub fn read_csv<R: Read>(r: R, grid_spacing: f64, lags_used: usize, config: DetectorConfig) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["time", "t", "mu_hat", "lrv_hat"] {
            return Err(Error::Schema(format!("unexpected t-stat header {:?}", header)));
        }
        let mut out = Self {
            grid_times: Vec::new(),
            t_values: Vec::new(),
            mu_hats: Vec::new(),
            lrv_hats: Vec::new(),
            grid_spacing,
            lags_used,
            config,
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let time = parse_opt(&rec[0], "time", row)?
                .ok_or_else(|| Error::Input(format!("row {row}: missing time")))?;
            out.grid_times.push(T::of(time));
            out.t_values.push(parse_opt(&rec[1], "t", row)?.map(T::of));
            out.mu_hats.push(parse_opt(&rec[2], "mu_hat", row)?.map(T::of));
            out.lrv_hats.push(parse_opt(&rec[3], "lrv_hat", row)?.map(T::of));
        }
        if out.grid_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("t-stat grid times must be strictly increasing".into()));
        }
        Ok(out)
    }
}

/// Normalizing constants `a_m = sqrt(2 ln m)`, `b_m = a_m - ln(π ln m) / (2 a_m)`.
pub fn gumbel_constants(m: usize) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::Input(format!("the maximum statistic needs m >= 2, got {m}")));
    }
    let lm = (m as f64).ln();
    let a = (2.0 * lm).sqrt();
    let b = a - (std::f64::consts::PI * lm).ln() / (2.0 * a);
    Ok((a, b))
}

/// Gumbel CDF `exp(-exp(-x))`.
pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxStat {
    pub m: usize,
    pub t_star: f64,
    pub argmax_time: f64,
    pub a_m: f64,
    pub b_m: f64,
    pub normalized: f64,
}

impl MaxStat {
    /// Upper-tail probability under the Gumbel limit.
    pub fn gumbel_pvalue(&self) -> f64 {
        1.0 - gumbel_cdf(self.normalized)
    }
}

/// `T* = max |t|` over non-missing grid points, with Gumbel normalization.
pub fn max_stat<T: Scalar>(ts: &TStatSeries<T>) -> Result<MaxStat> {
    let mut m = 0;
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for (s, v) in ts.present() {
        m += 1;
        let a = v.f64().abs();
        if a > best.0 {
            best = (a, s.f64());
        }
    }
    if m == 0 {
        return Err(Error::EmptyWindow(ts.grid_times.last().map(|t| t.f64()).unwrap_or(f64::NAN)));
    }
    let (a_m, b_m) = gumbel_constants(m)?;
    Ok(MaxStat { m, t_star: best.0, argmax_time: best.1, a_m, b_m, normalized: (best.0 - b_m) * a_m })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstEvent {
    pub peak_time: f64,
    pub peak_t: f64,
    pub sign: i8,
    pub threshold_used: f64,
}

/// How overlapping detections are thinned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    /// Kept peaks are at least this many seconds apart.
    MinSeparation(f64),
    /// At most one event per day, days being `floor((time + offset) / day_seconds)`.
    PerDay { day_seconds: f64, offset: f64 },
}

impl Default for DedupPolicy {
    fn default() -> Self {
        DedupPolicy::MinSeparation(300.0)
    }
}

/// Indices of local maxima of `|t|`: strictly above the previous value and
/// above the next value that differs (plateaus resolve to their first point).
/// Missing values break neighbourhoods.
fn local_extrema(abs: &[Option<f64>]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = abs.len();
    let mut i = 1;
    while i + 1 < n {
        let (Some(prev), Some(cur)) = (abs[i - 1], abs[i]) else {
            i += 1;
            continue;
        };
        if cur <= prev {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && abs[j + 1] == Some(cur) {
            j += 1;
        }
        if let Some(Some(next)) = abs.get(j + 1) {
            if *next < cur {
                out.push(i);
            }
        }
        i = j + 1;
    }
    out
}

/// Local extrema of `|t|` at or above `threshold`, thinned greedily from
/// the largest peak down so kept peaks are `min_separation` seconds apart.
pub fn extract_events<T: Scalar>(ts: &TStatSeries<T>, threshold: f64, min_separation: f64) -> Result<Vec<BurstEvent>> {
    extract_events_with(ts, threshold, &DedupPolicy::MinSeparation(min_separation))
}

pub fn extract_events_with<T: Scalar>(ts: &TStatSeries<T>, threshold: f64, policy: &DedupPolicy) -> Result<Vec<BurstEvent>> {
    let times: Vec<f64> = ts.grid_times.iter().map(|t| t.f64()).collect();
    let values: Vec<Option<f64>> = ts.t_values.iter().map(|v| v.map(|x| x.f64())).collect();
    Ok(select_peaks(&times, &values, threshold, policy)?
        .into_iter()
        .map(|i| {
            let v = values[i].unwrap();
            BurstEvent { peak_time: times[i], peak_t: v, sign: if v >= 0.0 { 1 } else { -1 }, threshold_used: threshold }
        })
        .collect())
}

/// Indices of the peaks kept by [`extract_events_with`], in time order.
pub(crate) fn select_peaks(times: &[f64], values: &[Option<f64>], threshold: f64, policy: &DedupPolicy) -> Result<Vec<usize>> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("event threshold must be positive, got {threshold}")));
    }
    let abs: Vec<Option<f64>> = values.iter().map(|v| v.map(f64::abs)).collect();
    let mut cands: Vec<usize> = local_extrema(&abs)
        .into_iter()
        .filter(|&i| abs[i].is_some_and(|a| a >= threshold))
        .collect();
    cands.sort_by(|&a, &b| abs[b].partial_cmp(&abs[a]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cands {
        let clash = match *policy {
            DedupPolicy::MinSeparation(sep) => kept.iter().any(|&k| (times[k] - times[c]).abs() < sep),
            DedupPolicy::PerDay { day_seconds, offset } => {
                let day = |i: usize| ((times[i] + offset) / day_seconds).floor() as i64;
                kept.iter().any(|&k| day(k) == day(c))
            }
        };
        if !clash {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Writes events as `peak_time,peak_t,sign,threshold`.
pub fn write_events_csv<W: Write>(events: &[BurstEvent], mut w: W) -> Result<()> {
    writeln!(w, "peak_time,peak_t,sign,threshold")?;
    for e in events {
        writeln!(w, "{:.16e},{:.16e},{},{:.16e}", e.peak_time, e.peak_t, e.sign, e.threshold_used)?;
    }
    Ok(())
}

/// Reads events written by [`write_events_csv`].
pub fn read_events_csv<R: Read>(r: R) -> Result<Vec<BurstEvent>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["peak_time", "peak_t", "sign", "threshold"] {
        return Err(Error::Schema(format!("unexpected events header {}", header.join(","))));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| Error::Input(format!("events row {}: bad value {:?}", row + 1, &rec[i])))
        };
        let sign: i8 = rec[2].parse().map_err(|_| Error::Input(format!("events row {}: bad sign", row + 1)))?;
        out.push(BurstEvent { peak_time: num(0)?, peak_t: num(1)?, sign, threshold_used: num(3)? });
    }
    Ok(out)
}
