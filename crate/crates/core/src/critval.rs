//! Critical values for the maximum statistic from an AR(1) approximation
//! of the t-statistic sequence.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{gumbel_constants, select_peaks, DedupPolicy, TStatSeries};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bumped whenever the simulation scheme or file layout changes.
pub const TABLE_VERSION: u32 = 1;
pub const GENERATOR: &str = "ar1-max-abs/chacha8-stream-per-replication";

const RHO_CLAMP: f64 = 0.999;
const MIN_AR1_PAIRS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Fit {
    pub rho_hat: f64,
    pub intercept: f64,
    pub n_used: usize,
}

/// OLS of `t_i` on `(1, t_{i-1})` over consecutive non-missing pairs.
pub fn fit_ar1<T: Scalar>(ts: &TStatSeries<T>) -> Result<Ar1Fit> {
    let v: Vec<Option<f64>> = ts.t_values.iter().map(|x| x.map(|y| y.f64())).collect();
    fit_ar1_values(&v)
}

pub fn fit_ar1_values(values: &[Option<f64>]) -> Result<Ar1Fit> {
    let pairs: Vec<(f64, f64)> = values
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        })
        .collect();
    let n = pairs.len();
    if n < MIN_AR1_PAIRS {
        return Err(Error::Input(format!(
            "AR(1) fit needs at least {MIN_AR1_PAIRS} consecutive non-missing pairs, got {n}"
        )));
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 1e-300) {
        return Err(Error::Input("AR(1) fit: lagged values have zero variance".into()));
    }
    let rho = (sxy / sxx).clamp(-RHO_CLAMP, RHO_CLAMP);
    Ok(Ar1Fit { rho_hat: rho, intercept: my - rho * mx, n_used: n })
}

/// Empirical quantile, type 1 (inverse of the empirical CDF).
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Least-squares non-increasing fit (pool adjacent violators).
pub(crate) fn non_increasing_fit(x: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(x.len());
    for &v in x {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb));
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat(v).take(n)).collect()
}

/// Order-statistic standard error of the `p` quantile from `n` draws.
fn quantile_se(sorted: &[f64], p: f64) -> f64 {
    let d = (p * (1.0 - p) / sorted.len() as f64).sqrt();
    0.5 * (empirical_quantile(sorted, (p + d).min(1.0)) - empirical_quantile(sorted, (p - d).max(0.0)))
}

fn check_sim_args(rhos: &[f64], levels: &[f64], n_sims: usize) -> Result<()> {
    if n_sims < 1000 {
        return Err(Error::Config(format!("n_sims must be at least 1000, got {n_sims}")));
    }
    if let Some(r) = rhos.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::Domain(format!("rho must lie in [0, 1), got {r}")));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::Domain(format!("levels must lie in (0, 1), got {l}")));
    }
    Ok(())
}

fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Running maxima of `|Z|` for every `(rho, m)` pair in one replication.
/// The same shocks drive every `rho`, so rows share random numbers.
fn replicate(ms: &[usize], rhos: &[f64], burn_in: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let m_max = *ms.iter().max().unwrap();
    let z0: f64 = StandardNormal.sample(rng);
    let eps: Vec<f64> = (0..burn_in + m_max).map(|_| StandardNormal.sample(rng)).collect();
    for (r, &rho) in rhos.iter().enumerate() {
        let s = (1.0 - rho * rho).sqrt();
        let mut z = z0;
        for e in &eps[..burn_in] {
            z = rho * z + s * e;
        }
        let mut mx = 0.0f64;
        let mut next = 0;
        for (i, e) in eps[burn_in..].iter().enumerate() {
            z = rho * z + s * e;
            mx = mx.max(z.abs());
            while next < ms.len() && ms[next] == i + 1 {
                out[r * ms.len() + next] = mx;
                next += 1;
            }
        }
    }
}

/// Simulated maxima `[rho][m][replication]`; `ms` must be sorted ascending.
fn simulate_maxima(ms: &[usize], rhos: &[f64], n_sims: usize, burn_in: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let width = ms.len() * rhos.len();
    let flat: Vec<Vec<f64>> = (0..n_sims)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(seed, rep);
            let mut out = vec![0.0; width];
            replicate(ms, rhos, burn_in, &mut rng, &mut out);
            out
        })
        .collect();
    (0..rhos.len())
        .map(|r| {
            (0..ms.len())
                .map(|j| {
                    let mut col: Vec<f64> = flat.iter().map(|row| row[r * ms.len() + j]).collect();
                    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    col
                })
                .collect()
        })
        .collect()
}

/// Quantiles of `max_{i<=m} |Z_i|` for a stationary Gaussian AR(1) with
/// unit variance, after discarding `burn_in` steps.
pub fn simulate_max_quantiles(m: usize, rho: f64, levels: &[f64], n_sims: usize, burn_in: usize, seed: u64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    check_sim_args(&[rho], levels, n_sims)?;
    let sims = simulate_maxima(&[m], &[rho], n_sims, burn_in, seed);
    Ok(levels.iter().map(|&p| empirical_quantile(&sims[0][0], p)).collect())
}

/// `Φ⁻¹((1 + p^{1/m}) / 2)`, the `p` quantile of the maximum of `m`
/// independent `|N(0,1)|` draws.
pub fn iid_max_abs_quantile(m: usize, p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).unwrap();
    n.inverse_cdf(0.5 * (1.0 + p.powf(1.0 / m as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableAxes {
    pub m: Vec<usize>,
    pub rho: Vec<f64>,
    pub level: Vec<f64>,
}

impl Default for TableAxes {
    fn default() -> Self {
        Self {
            m: vec![100, 341, 1_000, 3_000, 10_000, 30_000],
            rho: vec![0.0, 0.5, 0.8, 0.9, 0.95, 0.98, 0.99],
            level: vec![0.90, 0.95, 0.99, 0.995],
        }
    }
}

impl TableAxes {
    fn validate(&self) -> Result<()> {
        let inc_usize = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        let inc_f64 = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if self.m.is_empty() || self.rho.is_empty() || self.level.is_empty() {
            return Err(Error::Config("table axes must be non-empty".into()));
        }
        if self.m[0] < 2 || !inc_usize(&self.m) {
            return Err(Error::Config("m axis must be strictly increasing and start at 2 or more".into()));
        }
        if !inc_f64(&self.rho) || !inc_f64(&self.level) {
            return Err(Error::Config("rho and level axes must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Quantiles of the raw and Gumbel-normalized maximum, indexed
/// `[m][rho][level]`.
///
/// Adjacent rho rows differ by less than the Monte Carlo error at small
/// rho, so each `(m, level)` column is made non-increasing in rho by
/// isotonic regression before it is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueTable {
    pub version: u32,
    pub generator: String,
    pub seed: u64,
    pub n_sims: usize,
    pub burn_in: usize,
    pub axes: TableAxes,
    pub raw: Vec<Vec<Vec<f64>>>,
    pub normalized: Vec<Vec<Vec<f64>>>,
    pub std_err: Vec<Vec<Vec<f64>>>,
}

/// A node where the table fails one of its monotonicity requirements.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityViolation {
    pub axis: &'static str,
    pub m: usize,
    pub rho: f64,
    pub level: f64,
}

impl CriticalValueTable {
    pub fn build(axes: TableAxes, n_sims: usize, burn_in: usize, seed: u64) -> Result<Self> {
        axes.validate()?;
        check_sim_args(&axes.rho, &axes.level, n_sims)?;
        let sims = simulate_maxima(&axes.m, &axes.rho, n_sims, burn_in, seed);
        let mut raw = Vec::new();
        let mut normalized = Vec::new();
        let mut std_err = Vec::new();
        for (j, &m) in axes.m.iter().enumerate() {
            let (a, b) = gumbel_constants(m)?;
            let mut raw_m = Vec::new();
            let mut norm_m = Vec::new();
            let mut se_m = Vec::new();
            for r in 0..axes.rho.len() {
                let col = &sims[r][j];
                raw_m.push(axes.level.iter().map(|&p| empirical_quantile(col, p)).collect::<Vec<f64>>());
                se_m.push(axes.level.iter().map(|&p| quantile_se(col, p)).collect());
            }
            for l in 0..axes.level.len() {
                let row: Vec<f64> = raw_m.iter().map(|q| q[l]).collect();
                for (q, v) in raw_m.iter_mut().zip(non_increasing_fit(&row)) {
                    q[l] = v;
                }
            }
            for q in &raw_m {
                norm_m.push(q.iter().map(|x| (x - b) * a).collect());
            }
            raw.push(raw_m);
            normalized.push(norm_m);
            std_err.push(se_m);
        }
        Ok(Self {
            version: TABLE_VERSION,
            generator: GENERATOR.to_string(),
            seed,
            n_sims,
            burn_in,
            axes,
            raw,
            normalized,
            std_err,
        })
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_reader(r)?;
        match v.get("version").and_then(|x| x.as_u64()) {
            Some(ver) if ver == TABLE_VERSION as u64 => {}
            Some(ver) => {
                return Err(Error::Schema(format!(
                    "critical-value table version {ver} does not match supported version {TABLE_VERSION}"
                )))
            }
            None => return Err(Error::Schema("critical-value table has no version field".into())),
        }
        let t: Self = serde_json::from_value(v)?;
        t.axes.validate()?;
        let (nm, nr, nl) = (t.axes.m.len(), t.axes.rho.len(), t.axes.level.len());
        let shaped = |x: &Vec<Vec<Vec<f64>>>| x.len() == nm && x.iter().all(|r| r.len() == nr && r.iter().all(|l| l.len() == nl));
        if !shaped(&t.raw) || !shaped(&t.normalized) || !shaped(&t.std_err) {
            return Err(Error::Schema("critical-value table arrays do not match its axes".into()));
        }
        Ok(t)
    }

    /// Nodes violating: strictly increasing in level, non-increasing in rho,
    /// increasing in m.
    pub fn monotonicity_violations(&self) -> Vec<MonotonicityViolation> {
        let a = &self.axes;
        let mut out = Vec::new();
        for (j, &m) in a.m.iter().enumerate() {
            for (r, &rho) in a.rho.iter().enumerate() {
                for (l, &level) in a.level.iter().enumerate() {
                    let v = self.raw[j][r][l];
                    if l > 0 && v <= self.raw[j][r][l - 1] {
                        out.push(MonotonicityViolation { axis: "level", m, rho, level });
                    }
                    if r > 0 && v > self.raw[j][r - 1][l] {
                        out.push(MonotonicityViolation { axis: "rho", m, rho, level });
                    }
                    if j > 0 && v <= self.raw[j - 1][r][l] {
                        out.push(MonotonicityViolation { axis: "m", m, rho, level });
                    }
                }
            }
        }
        out
    }

    /// Monte Carlo standard error at a node.
    pub fn node_std_err(&self, m: usize, rho: f64, level: f64) -> Option<f64> {
        let j = self.axes.m.iter().position(|&x| x == m)?;
        let r = self.axes.rho.iter().position(|&x| x == rho)?;
        let l = self.axes.level.iter().position(|&x| x == level)?;
        Some(self.std_err[j][r][l])
    }
}

/// Bracketing indices and weight of `x` on a sorted axis.
fn bracket(axis: &[f64], x: f64, name: &str) -> Result<(usize, usize, f64)> {
    let n = axis.len();
    let tol = 1e-12 * (1.0 + x.abs());
    if x < axis[0] - tol || x > axis[n - 1] + tol {
        return Err(Error::Extrapolation(format!(
            "{name} = {x} lies outside the table range [{}, {}]",
            axis[0],
            axis[n - 1]
        )));
    }
    if let Some(i) = axis.iter().position(|&a| (a - x).abs() <= tol) {
        return Ok((i, i, 0.0));
    }
    let hi = axis.partition_point(|&a| a < x);
    let lo = hi - 1;
    Ok((lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo])))
}

/// Raw critical value by bilinear interpolation in `(ln m, rho)`; `level`
/// must be one of the table's levels.
pub fn critical_value(table: &CriticalValueTable, m: usize, rho: f64, level: f64) -> Result<f64> {
    let l = table
        .axes
        .level
        .iter()
        .position(|&x| (x - level).abs() < 1e-12)
        .ok_or_else(|| Error::Extrapolation(format!("level {level} is not a table level {:?}", table.axes.level)))?;
    if m == 0 {
        return Err(Error::Extrapolation("m must be positive".into()));
    }
    let log_m: Vec<f64> = table.axes.m.iter().map(|&x| (x as f64).ln()).collect();
    let (m0, m1, wm) = bracket(&log_m, (m as f64).ln(), "ln m")?;
    let (r0, r1, wr) = bracket(&table.axes.rho, rho, "rho")?;
    let v = |j: usize, r: usize| table.raw[j][r][l];
    let lo = (1.0 - wr) * v(m0, r0) + wr * v(m0, r1);
    let hi = (1.0 - wr) * v(m1, r0) + wr * v(m1, r1);
    Ok((1.0 - wm) * lo + wm * hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalsePositiveEstimate {
    /// Mean number of extracted events per window.
    pub expected_events: f64,
    pub std_err: f64,
    /// Share of windows with at least one event.
    pub any_event_rate: f64,
}

/// Monte Carlo count of events the extraction rule finds in null AR(1)
/// windows of `m` grid points spaced `spacing` seconds apart.
#[allow(clippy::too_many_arguments)]
pub fn expected_false_positives(
    m: usize,
    rho: f64,
    threshold: f64,
    spacing: f64,
    policy: &DedupPolicy,
    n_sims: usize,
    burn_in: usize,
    seed: u64,
) -> Result<FalsePositiveEstimate> {
    check_sim_args(&[rho], &[0.5], n_sims)?;
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    if m < 3 {
        return Err(Error::Config(format!("m must be at least 3, got {m}")));
    }
    let times: Vec<f64> = (0..m).map(|i| i as f64 * spacing).collect();
    let counts: Vec<usize> = (0..n_sims)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(seed, rep);
            let s = (1.0 - rho * rho).sqrt();
            let mut z: f64 = StandardNormal.sample(&mut rng);
            for _ in 0..burn_in {
                z = rho * z + s * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
            let path: Vec<Option<f64>> = (0..m)
                .map(|_| {
                    z = rho * z + s * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                    Some(z)
                })
                .collect();
            select_peaks(&times, &path, threshold, policy).map(|v| v.len()).unwrap_or(0)
        })
        .collect();
    let n = n_sims as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let any = counts.iter().filter(|&&c| c > 0).count() as f64 / n;
    Ok(FalsePositiveEstimate { expected_events: mean, std_err: (var / n).sqrt(), any_event_rate: any })
}
