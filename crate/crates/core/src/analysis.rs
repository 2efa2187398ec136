//! What happens around detected bursts: pre and post-event returns,
//! reversion and volume-interaction regressions with Newey–West errors,
//! time-of-day volume normalization and double-sorted tables.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::critval::empirical_quantile;
use crate::detector::{BurstEvent, TStatSeries};
use crate::error::{Error, Result};
use crate::ingest::{SessionWindow, TickRecord};
use crate::series::TickSeries;

pub const DEFAULT_HORIZON: f64 = 300.0;
const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventReturns {
    /// Seconds since the epoch.
    pub peak_time: f64,
    pub sign: i8,
    pub r_minus: f64,
    pub r_plus: f64,
    #[serde(default)]
    pub v_minus: Option<f64>,
    /// Length of the pre-event window in seconds.
    pub horizon: f64,
}

/// How far before and after the peak returns are measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventWindow {
    Fixed(f64),
    /// Back to the latest grid point before the peak with `|t| < 1`, and
    /// the same length after it.
    Endogenous,
}

impl Default for EventWindow {
    fn default() -> Self {
        EventWindow::Fixed(DEFAULT_HORIZON)
    }
}

fn endogenous_horizon(ts: &TStatSeries<f64>, peak_rel: f64) -> Option<f64> {
    let end = ts.grid_times.partition_point(|&t| t < peak_rel);
    (0..end)
        .rev()
        .find(|&i| matches!(ts.t_values[i], Some(v) if v.abs() < 1.0))
        .map(|i| peak_rel - ts.grid_times[i])
        .filter(|&h| h > 0.0)
}

/// Log-returns over `[peak - h, peak]` and `[peak, peak + h]`, prices
/// carried forward from the last observation. Events whose windows are not
/// covered by the series are skipped with a warning.
pub fn event_returns(
    series: &TickSeries<f64>,
    events: &[BurstEvent],
    window: EventWindow,
    tstats: Option<&TStatSeries<f64>>,
) -> Result<Vec<EventReturns>> {
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let origin = series.origin_ms as f64 / 1000.0;
    let (first, last) = (series.times()[0], series.times()[series.len() - 1]);
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        let peak = e.peak_time - origin;
        let h = match window {
            EventWindow::Fixed(h) if h > 0.0 => Some(h),
            EventWindow::Fixed(h) => return Err(Error::Config(format!("horizon must be positive, got {h}"))),
            EventWindow::Endogenous => {
                let ts = tstats.ok_or_else(|| Error::Config("endogenous windows need the t-statistic series".into()))?;
                endogenous_horizon(ts, peak)
            }
        };
        let Some(h) = h else {
            log::warn!("no endogenous window for the event at {}", e.peak_time);
            continue;
        };
        if peak - h < first || peak + h > last {
            log::warn!("event at {} is not covered by the series, skipped", e.peak_time);
            continue;
        }
        let at = |t: f64| series.value_at(t).expect("covered by the series");
        let x0 = at(peak);
        out.push(EventReturns {
            peak_time: e.peak_time,
            sign: e.sign,
            r_minus: x0 - at(peak - h),
            r_plus: at(peak + h) - x0,
            v_minus: None,
            horizon: h,
        });
    }
    Ok(out)
}

/// Lag count `floor(4 (n/100)^{2/9})`.
pub fn default_nw_lags(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

fn condition_number(x: &DMatrix<f64>) -> f64 {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn xtx_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if condition_number(x) > MAX_CONDITION {
        return Err(Error::Numerical("design matrix is singular or collinear".into()));
    }
    (x.transpose() * x).try_inverse().ok_or_else(|| Error::Numerical("X'X is not invertible".into()))
}

/// Newey–West standard errors of OLS coefficients with Bartlett weights
/// `1 - l/(lags + 1)`; `lags = 0` gives White's heteroskedasticity-robust
/// errors.
pub fn nw_se(x: &DMatrix<f64>, residuals: &DVector<f64>, lags: usize) -> Result<Vec<f64>> {
    let n = x.nrows();
    if residuals.len() != n {
        return Err(Error::Input("residuals and design differ in length".into()));
    }
    let bread = xtx_inverse(x)?;
    let k = x.ncols();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    let scores: Vec<DVector<f64>> = (0..n).map(|t| x.row(t).transpose() * residuals[t]).collect();
    for s in &scores {
        meat += s * s.transpose();
    }
    for l in 1..=lags.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let mut g = DMatrix::<f64>::zeros(k, k);
        for t in l..n {
            g += &scores[t] * scores[t - l].transpose();
        }
        meat += (&g + g.transpose()) * w;
    }
    let cov = &bread * meat * &bread;
    Ok((0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect())
}

/// Classical homoskedastic OLS standard errors.
pub fn ols_se(x: &DMatrix<f64>, residuals: &DVector<f64>) -> Result<Vec<f64>> {
    let (n, k) = (x.nrows(), x.ncols());
    if n <= k {
        return Err(Error::Input("need more observations than regressors".into()));
    }
    let s2 = residuals.norm_squared() / (n - k) as f64;
    let bread = xtx_inverse(x)?;
    Ok((0..k).map(|i| (s2 * bread[(i, i)]).sqrt()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: DVector<f64>,
    pub r_squared: f64,
}

pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    if x.nrows() != y.len() || x.nrows() <= x.ncols() {
        return Err(Error::Input("design and response mismatch or too few rows".into()));
    }
    let beta = xtx_inverse(x)? * x.transpose() * y;
    let residuals = y - x * &beta;
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if tss > 0.0 { (1.0 - residuals.norm_squared() / tss).clamp(0.0, 1.0) } else { 0.0 };
    Ok(OlsFit { coefficients: beta.iter().copied().collect(), residuals, r_squared })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub a: f64,
    pub b: f64,
    /// Volume interaction; absent in the plain reversion regression.
    pub c: Option<f64>,
    pub t_a: f64,
    pub t_b: f64,
    pub t_c: Option<f64>,
    pub r_squared: f64,
    pub n: usize,
    pub nw_lags: usize,
    pub reversal_fraction: f64,
}

/// Share of events where `R⁺` and `R⁻` have strictly opposite signs.
pub fn reversal_fraction(samples: &[EventReturns]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| s.r_minus * s.r_plus < 0.0).count() as f64 / samples.len() as f64
}

fn time_ordered(samples: &[EventReturns]) -> Vec<EventReturns> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| {
        a.peak_time
            .total_cmp(&b.peak_time)
            .then(a.r_minus.total_cmp(&b.r_minus))
            .then(a.r_plus.total_cmp(&b.r_plus))
            .then(a.v_minus.unwrap_or(0.0).total_cmp(&b.v_minus.unwrap_or(0.0)))
    });
    v
}

fn t_stats(coef: &[f64], se: &[f64]) -> Vec<f64> {
    coef.iter().zip(se).map(|(c, s)| if *s > 0.0 { c / s } else { 0.0 }).collect()
}

/// `R⁺ = a + b R⁻ + ε` with Newey–West t-statistics. Samples are put in
/// time order first so the result does not depend on input order.
pub fn reversion_regression(samples: &[EventReturns]) -> Result<RegressionResult> {
    if samples.len() < 10 {
        return Err(Error::Input(format!("reversion regression needs 10 events, got {}", samples.len())));
    }
    let s = time_ordered(samples);
    let n = s.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { s[i].r_minus });
    let y = DVector::from_iterator(n, s.iter().map(|e| e.r_plus));
    let fit = ols(&x, &y)?;
    let lags = default_nw_lags(n);
    let t = t_stats(&fit.coefficients, &nw_se(&x, &fit.residuals, lags)?);
    Ok(RegressionResult {
        a: fit.coefficients[0],
        b: fit.coefficients[1],
        c: None,
        t_a: t[0],
        t_b: t[1],
        t_c: None,
        r_squared: fit.r_squared,
        n,
        nw_lags: lags,
        reversal_fraction: reversal_fraction(&s),
    })
}

/// `R⁺ = a + b R⁻ + c R⁻ V⁻ + ε`. When the interaction is identically zero
/// the nested reversion regression is returned with `c = 0`.
pub fn cgw_regression(samples: &[EventReturns]) -> Result<RegressionResult> {
    if samples.len() < 20 {
        return Err(Error::Input(format!("volume regression needs 20 events, got {}", samples.len())));
    }
    if samples.iter().any(|s| s.v_minus.is_none()) {
        return Err(Error::Input("volume regression needs V⁻ for every event".into()));
    }
    let s = time_ordered(samples);
    let n = s.len();
    let inter: Vec<f64> = s.iter().map(|e| e.r_minus * e.v_minus.unwrap_or(0.0)).collect();
    if inter.iter().all(|&v| v == 0.0) {
        return Ok(RegressionResult { c: Some(0.0), t_c: None, ..reversion_regression(&s)? });
    }
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => s[i].r_minus,
        _ => inter[i],
    });
    let y = DVector::from_iterator(n, s.iter().map(|e| e.r_plus));
    let fit = ols(&x, &y)?;
    let lags = default_nw_lags(n);
    let t = t_stats(&fit.coefficients, &nw_se(&x, &fit.residuals, lags)?);
    Ok(RegressionResult {
        a: fit.coefficients[0],
        b: fit.coefficients[1],
        c: Some(fit.coefficients[2]),
        t_a: t[0],
        t_b: t[1],
        t_c: Some(t[2]),
        r_squared: fit.r_squared,
        n,
        nw_lags: lags,
        reversal_fraction: reversal_fraction(&s),
    })
}

/// Trade notional by local day, for time-of-day normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeProfile {
    session: SessionWindow,
    /// Per day: clock milliseconds after midnight and cumulative notional.
    days: Vec<(i64, Vec<i64>, Vec<f64>)>,
}

impl VolumeProfile {
    pub fn new(records: &[TickRecord], session: SessionWindow) -> Result<Self> {
        let mut days = Vec::new();
        for (day, recs) in session.split(records) {
            let open = session.open_ms(day) - session.start_sec as i64 * 1000;
            let mut clock = Vec::new();
            let mut cum = Vec::new();
            let mut total = 0.0;
            for r in recs.iter().filter(|r| r.trade_px.is_some()) {
                total += r.notional();
                clock.push(r.ts_ms - open);
                cum.push(total);
            }
            days.push((day, clock, cum));
        }
        if days.is_empty() {
            return Err(Error::Input("no trading days to build a volume profile".into()));
        }
        if days.len() < 20 {
            log::warn!("volume profile from only {} days", days.len());
        }
        Ok(Self { session, days })
    }

    pub fn days(&self) -> usize {
        self.days.len()
    }

    fn day_notional(clock: &[i64], cum: &[f64], from: i64, to: i64) -> f64 {
        let below = |x: i64| {
            let i = clock.partition_point(|&c| c < x);
            if i == 0 {
                0.0
            } else {
                cum[i - 1]
            }
        };
        below(to) - below(from)
    }

    /// Average notional over days in the clock window `[from, to)`, in ms
    /// after local midnight.
    pub fn average(&self, from: i64, to: i64) -> f64 {
        let s: f64 = self.days.iter().map(|(_, c, n)| Self::day_notional(c, n, from, to)).sum();
        s / self.days.len() as f64
    }

    /// Notional in `[end - window, end)` (epoch ms) over the average for the
    /// same clock window.
    pub fn normalized(&self, end_ms: i64, window_ms: i64) -> Result<f64> {
        let local = end_ms + self.session.utc_offset_minutes as i64 * 60_000;
        let (day, clock_end) = (local.div_euclid(86_400_000), local.rem_euclid(86_400_000));
        let from = clock_end - window_ms;
        let avg = self.average(from, clock_end);
        if !(avg > 0.0) {
            return Err(Error::Numerical(format!("no average volume in the clock window ending at {clock_end} ms")));
        }
        let own = self
            .days
            .iter()
            .find(|(d, _, _)| *d == day)
            .map(|(_, c, n)| Self::day_notional(c, n, from, clock_end))
            .unwrap_or(0.0);
        Ok(own / avg)
    }
}

/// Fills `v_minus` for each event from the volume profile.
pub fn normalized_volume(samples: &mut [EventReturns], profile: &VolumeProfile) -> Result<()> {
    for s in samples {
        let end = (s.peak_time * 1000.0).round() as i64;
        s.v_minus = Some(profile.normalized(end, (s.horizon * 1000.0).round() as i64)?);
    }
    Ok(())
}

/// Mean `R⁺` by `R⁻` bucket (rows) and `V⁻` bucket (columns): low is the
/// first quartile, medium the inter-quartile range, high the fourth quartile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleSortTable {
    /// `-1` for negative, `1` for positive pre-event returns.
    pub sign: i8,
    pub cells: [[Option<f64>; 3]; 3],
    pub counts: [[usize; 3]; 3],
    /// High minus low volume, per return bucket.
    pub high_minus_low: [Option<f64>; 3],
}

fn bucket(x: f64, q1: f64, q3: f64) -> usize {
    if x <= q1 {
        0
    } else if x > q3 {
        2
    } else {
        1
    }
}

fn sort_one(samples: &[&EventReturns], sign: i8) -> DoubleSortTable {
    let mut table = DoubleSortTable { sign, cells: [[None; 3]; 3], counts: [[0; 3]; 3], high_minus_low: [None; 3] };
    if samples.is_empty() {
        return table;
    }
    let quart = |f: &dyn Fn(&EventReturns) -> f64| {
        let mut v: Vec<f64> = samples.iter().map(|s| f(s)).collect();
        v.sort_by(f64::total_cmp);
        (empirical_quantile(&v, 0.25), empirical_quantile(&v, 0.75))
    };
    let (r1, r3) = quart(&|s| s.r_minus);
    let (v1, v3) = quart(&|s| s.v_minus.unwrap_or(0.0));
    let mut sums = [[0.0; 3]; 3];
    for s in samples {
        let i = bucket(s.r_minus, r1, r3);
        let j = bucket(s.v_minus.unwrap_or(0.0), v1, v3);
        sums[i][j] += s.r_plus;
        table.counts[i][j] += 1;
    }
    for i in 0..3 {
        for j in 0..3 {
            if table.counts[i][j] > 0 {
                table.cells[i][j] = Some(sums[i][j] / table.counts[i][j] as f64);
            }
        }
        if let (Some(h), Some(l)) = (table.cells[i][2], table.cells[i][0]) {
            table.high_minus_low[i] = Some(h - l);
        }
    }
    table
}

/// Double-sorted tables for negative and positive pre-event returns.
pub fn double_sort(samples: &[EventReturns]) -> Result<[DoubleSortTable; 2]> {
    if samples.len() < 30 {
        return Err(Error::Input(format!("double sort needs 30 events, got {}", samples.len())));
    }
    if samples.iter().any(|s| s.v_minus.is_none()) {
        return Err(Error::Input("double sort needs V⁻ for every event".into()));
    }
    let neg: Vec<&EventReturns> = samples.iter().filter(|s| s.r_minus < 0.0).collect();
    let pos: Vec<&EventReturns> = samples.iter().filter(|s| s.r_minus >= 0.0).collect();
    Ok([sort_one(&neg, -1), sort_one(&pos, 1)])
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Columns `model,a,b,c,t_a,t_b,t_c,r_squared,n,nw_lags,reversal_fraction`.
pub fn write_regressions_csv<W: Write>(rows: &[(&str, &RegressionResult)], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["model", "a", "b", "c", "t_a", "t_b", "t_c", "r_squared", "n", "nw_lags", "reversal_fraction"])?;
    for (name, r) in rows {
        wtr.write_record([
            name.to_string(),
            r.a.to_string(),
            r.b.to_string(),
            opt(r.c),
            r.t_a.to_string(),
            r.t_b.to_string(),
            opt(r.t_c),
            r.r_squared.to_string(),
            r.n.to_string(),
            r.nw_lags.to_string(),
            r.reversal_fraction.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Long format: `sign,r_bucket,v_bucket,mean_r_plus,count`, with `v_bucket`
/// `high-low` for the difference column.
pub fn write_double_sort_csv<W: Write>(tables: &[DoubleSortTable], w: W) -> Result<()> {
    const NAMES: [&str; 3] = ["low", "medium", "high"];
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sign", "r_bucket", "v_bucket", "mean_r_plus", "count"])?;
    for t in tables {
        for i in 0..3 {
            for j in 0..3 {
                wtr.write_record([t.sign.to_string(), NAMES[i].into(), NAMES[j].into(), opt(t.cells[i][j]), t.counts[i][j].to_string()])?;
            }
            wtr.write_record([t.sign.to_string(), NAMES[i].into(), "high-low".into(), opt(t.high_minus_low[i]), String::new()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Columns `peak_time,sign,r_minus,r_plus,v_minus,horizon`.
pub fn write_event_returns_csv<W: Write>(samples: &[EventReturns], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["peak_time", "sign", "r_minus", "r_plus", "v_minus", "horizon"])?;
    for s in samples {
        wtr.write_record([
            s.peak_time.to_string(),
            s.sign.to_string(),
            s.r_minus.to_string(),
            s.r_plus.to_string(),
            opt(s.v_minus),
            s.horizon.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ev(t: f64) -> BurstEvent {
        BurstEvent { peak_time: t, peak_t: 5.0, sign: -1, threshold_used: 4.0 }
    }

    fn sample(t: f64, rm: f64, rp: f64, v: Option<f64>) -> EventReturns {
        EventReturns { peak_time: t, sign: if rm < 0.0 { -1 } else { 1 }, r_minus: rm, r_plus: rp, v_minus: v, horizon: 300.0 }
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn v_shape_and_monotone_paths() {
        let times: Vec<f64> = (0..=1200).map(|i| i as f64).collect();
        let v: Vec<f64> = times.iter().map(|&t| -0.01 * (1.0 - (t - 600.0).abs() / 300.0).max(0.0)).collect();
        let s = TickSeries::new(0, times.clone(), v).unwrap();
        let r = event_returns(&s, &[ev(600.0)], EventWindow::default(), None).unwrap();
        assert_relative_eq!(r[0].r_minus, -0.01, epsilon = 1e-15);
        assert_relative_eq!(r[0].r_plus, 0.01, epsilon = 1e-15);
        let mono: Vec<f64> = times.iter().map(|t| t * 1e-5).collect();
        let s = TickSeries::new(0, times, mono).unwrap();
        let r = event_returns(&s, &[ev(600.0), ev(100.0)], EventWindow::default(), None).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].r_minus > 0.0 && r[0].r_plus > 0.0);
    }

    #[test]
    fn carries_prices_forward_and_honours_origin() {
        let s = TickSeries::new(10_000, vec![0.0, 250.0, 700.0], vec![0.0, 1.0, 3.0]).unwrap();
        let r = event_returns(&s, &[ev(10.0 + 400.0)], EventWindow::Fixed(300.0), None).unwrap();
        assert_eq!((r[0].r_minus, r[0].r_plus), (1.0, 2.0));
    }

    #[test]
    fn endogenous_window() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 10.0).collect();
        let s = TickSeries::new(0, times.clone(), times.iter().map(|t| t * 1e-4).collect()).unwrap();
        let mut ts = TStatSeries {
            grid_times: times.clone(),
            t_values: vec![Some(2.0); 101],
            mu_hats: vec![None; 101],
            lrv_hats: vec![None; 101],
            grid_spacing: 10.0,
            lags_used: 0,
            config: crate::detector::DetectorConfig::default(),
        };
        ts.t_values[30] = Some(0.5);
        let r = event_returns(&s, &[ev(500.0)], EventWindow::Endogenous, Some(&ts)).unwrap();
        assert_eq!(r[0].horizon, 200.0);
        assert!(event_returns(&s, &[ev(500.0)], EventWindow::Endogenous, None).is_err());
    }

    #[test]
    fn perfect_reversion() {
        let s: Vec<EventReturns> = (0..20).map(|i| sample(i as f64, (i as f64 - 9.5) * 1e-3, -(i as f64 - 9.5) * 1e-3, None)).collect();
        let r = reversion_regression(&s).unwrap();
        assert_relative_eq!(r.b, -1.0, epsilon = 1e-12);
        assert_relative_eq!(r.r_squared, 1.0, epsilon = 1e-12);
        assert_eq!(r.reversal_fraction, 1.0);
        assert!(reversion_regression(&s[..5]).is_err());
        let zeros: Vec<EventReturns> = (0..20).map(|i| sample(i as f64, 0.0, 1.0, None)).collect();
        assert!(reversion_regression(&zeros).is_err());
    }

    #[test]
    fn ties_are_not_reversals() {
        let s = [sample(0.0, 0.0, 1.0, None), sample(1.0, -1.0, 0.0, None), sample(2.0, -1.0, 1.0, None), sample(3.0, 1.0, 1.0, None)];
        assert_eq!(reversal_fraction(&s), 0.25);
    }

    #[test]
    fn order_invariance_and_nesting() {
        let z = normals(120, 1);
        let s: Vec<EventReturns> = (0..60).map(|i| sample(i as f64, z[i], -0.3 * z[i] + 0.5 * z[60 + i], Some(0.0))).collect();
        let mut rev = s.clone();
        rev.reverse();
        assert_eq!(reversion_regression(&s).unwrap(), reversion_regression(&rev).unwrap());
        let base = reversion_regression(&s).unwrap();
        let c = cgw_regression(&s).unwrap();
        assert_eq!((c.a, c.b, c.c), (base.a, base.b, Some(0.0)));
    }

    #[test]
    fn cgw_recovers_coefficients() {
        let n = 2000;
        let z = normals(3 * n, 2);
        let s: Vec<EventReturns> = (0..n)
            .map(|i| {
                let rm = z[i];
                let v = z[n + i].abs() + 0.5;
                sample(i as f64, rm, 0.1 - 0.2 * rm - 0.3 * rm * v + 0.5 * z[2 * n + i], Some(v))
            })
            .collect();
        let r = cgw_regression(&s).unwrap();
        let x = DMatrix::from_fn(n, 3, |i, j| [1.0, s[i].r_minus, s[i].r_minus * s[i].v_minus.unwrap()][j]);
        let y = DVector::from_iterator(n, s.iter().map(|e| e.r_plus));
        let fit = ols(&x, &y).unwrap();
        let se = nw_se(&x, &fit.residuals, r.nw_lags).unwrap();
        for (est, (truth, se)) in [r.a, r.b, r.c.unwrap()].iter().zip([0.1, -0.2, -0.3].iter().zip(&se)) {
            assert!((est - truth).abs() < 3.0 * se, "{est} vs {truth}");
        }
        let collinear: Vec<EventReturns> = s.iter().map(|e| EventReturns { v_minus: Some(1.0), ..*e }).collect();
        assert!(matches!(cgw_regression(&collinear), Err(Error::Numerical(_))));
    }

    #[test]
    fn white_and_classical_errors() {
        let n = 10_000;
        let z = normals(2 * n, 3);
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
        let y = DVector::from_iterator(n, (0..n).map(|i| 1.0 + 2.0 * z[i] + z[n + i]));
        let fit = ols(&x, &y).unwrap();
        let white = nw_se(&x, &fit.residuals, 0).unwrap();
        let classical = ols_se(&x, &fit.residuals).unwrap();
        for (w, c) in white.iter().zip(&classical) {
            assert!((w / c - 1.0).abs() < 0.1);
        }
        // explicit sandwich
        let bread = (x.transpose() * &x).try_inverse().unwrap();
        let mut meat = DMatrix::<f64>::zeros(2, 2);
        for t in 0..n {
            let r = x.row(t).transpose() * fit.residuals[t];
            meat += &r * r.transpose();
        }
        let cov = &bread * meat * &bread;
        assert_relative_eq!(white[1], cov[(1, 1)].sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn nw_exceeds_classical_under_autocorrelation() {
        let n = 5000;
        let z = normals(2 * n, 4);
        let mut x1 = vec![0.0; n];
        let mut e = vec![0.0; n];
        for i in 1..n {
            x1[i] = 0.5 * x1[i - 1] + z[i];
            e[i] = 0.5 * e[i - 1] + z[n + i];
        }
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x1[i] });
        let y = DVector::from_iterator(n, (0..n).map(|i| x1[i] + e[i]));
        let fit = ols(&x, &y).unwrap();
        let nw = nw_se(&x, &fit.residuals, 10).unwrap();
        let classical = ols_se(&x, &fit.residuals).unwrap();
        assert!(nw[1] > classical[1]);
        assert_eq!(default_nw_lags(100), 4);
    }

    fn trade(ts: i64, sz: f64) -> TickRecord {
        TickRecord { ts_ms: ts, bid: None, ask: None, trade_px: Some(100.0), trade_sz: Some(sz) }
    }

    fn uniform_days(days: i64, per_minute: f64) -> Vec<TickRecord> {
        let mut v = Vec::new();
        for d in 0..days {
            for m in 60..(60 * 10) {
                v.push(trade(d * 86_400_000 + m * 60_000, per_minute));
            }
        }
        v
    }

    #[test]
    fn volume_normalization() {
        let session = SessionWindow { start_sec: 3600, end_sec: 36_000, utc_offset_minutes: 0 };
        let mut recs = uniform_days(25, 1.0);
        let p = VolumeProfile::new(&recs, session).unwrap();
        assert_eq!(p.days(), 25);
        let end = 3 * 86_400_000 + 5 * 3_600_000;
        assert_relative_eq!(p.normalized(end, 300_000).unwrap(), 1.0, epsilon = 1e-12);
        // double the event window's volume on day 3
        for r in recs.iter_mut().filter(|r| r.ts_ms >= end - 300_000 && r.ts_ms < end) {
            r.trade_sz = Some(2.0);
        }
        let p2 = VolumeProfile::new(&recs, session).unwrap();
        let avg_scale = (24.0 + 2.0) / 25.0;
        assert_relative_eq!(p2.normalized(end, 300_000).unwrap(), 2.0 / avg_scale, epsilon = 1e-12);
        let mean: f64 = (0..25).map(|d| p2.normalized(d * 86_400_000 + 5 * 3_600_000, 300_000).unwrap()).sum::<f64>() / 25.0;
        assert_relative_eq!(mean, 1.0, epsilon = 1e-12);
        assert!(VolumeProfile::new(&[], session).is_err());
        let mut ev = [sample(end as f64 / 1000.0, -0.01, 0.005, None)];
        normalized_volume(&mut ev, &p).unwrap();
        assert_relative_eq!(ev[0].v_minus.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn double_sort_tables() {
        let s: Vec<EventReturns> = (0..40).map(|i| sample(i as f64, -((i % 8) as f64) - 1.0, 0.5, Some((i % 5) as f64))).collect();
        let [neg, pos] = double_sort(&s).unwrap();
        for row in neg.cells.iter() {
            for c in row.iter().flatten() {
                assert_eq!(*c, 0.5);
            }
        }
        assert!(neg.high_minus_low.iter().flatten().all(|&d| d == 0.0));
        assert_eq!(pos.counts.iter().flatten().sum::<usize>(), 0);
        assert!(pos.cells.iter().flatten().all(|c| c.is_none()));
        assert!(double_sort(&s[..10]).is_err());

        let z = normals(600, 5);
        let s: Vec<EventReturns> = (0..300)
            .map(|i| {
                let rm = -z[i].abs();
                let v = z[300 + i].abs();
                sample(i as f64, rm, -0.5 * rm * (1.0 + v) + 0.01 * z[i / 2], Some(v))
            })
            .collect();
        let [neg, _] = double_sort(&s).unwrap();
        assert!(neg.high_minus_low[0].unwrap() > 0.0);
        let mut buf = Vec::new();
        write_double_sort_csv(&[neg], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 13);
    }
}
