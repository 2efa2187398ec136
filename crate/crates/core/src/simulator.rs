//! Simulated trading days: Heston stochastic volatility, parametric drift
//! and volatility bursts, tempered stable jumps, pre-announced jumps and
//! heteroscedastic microstructure noise.
//!
//! Model coefficients are annualized. Intraday time `t ∈ [0, 1]` is a
//! fraction of the day and maps to years through `day_fraction_of_year`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::ingest::TickRecord;
use crate::series::TickSeries;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
pub const SESSION_SECONDS: f64 = 23_400.0;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
}

impl Default for HestonParams {
    fn default() -> Self {
        Self { kappa: 5.0, theta: 0.0225, xi: 0.4, rho: -(0.5f64.sqrt()) }
    }
}

impl HestonParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("theta", self.theta), ("xi", self.xi)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("heston {name} must be positive, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Domain(format!("heston rho must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }

    /// Stationary law of the variance, `Gamma(shape, rate)`.
    pub fn stationary_gamma(&self) -> (f64, f64) {
        let x2 = self.xi * self.xi;
        (2.0 * self.kappa * self.theta / x2, 2.0 * self.kappa / x2)
    }

    /// `2κθ >= ξ²`.
    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.kappa * self.theta >= self.xi * self.xi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HestonPath {
    /// Variance at each of the `n + 1` grid points.
    pub variance: Vec<f64>,
    /// Log-price increments over the `n` steps.
    pub increments: Vec<f64>,
    /// Standard normal price shocks behind `increments`.
    pub shocks: Vec<f64>,
}

/// Euler scheme on `n` steps of one day; the variance is floored at zero
/// after every step. `v0 = None` draws it from the stationary Gamma law.
pub fn simulate_heston(p: &HestonParams, n: usize, day_fraction_of_year: f64, v0: Option<f64>, seed: u64) -> Result<HestonPath> {
    p.validate()?;
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 steps, got {n}")));
    }
    if !(day_fraction_of_year > 0.0) {
        return Err(Error::Domain("day_fraction_of_year must be positive".into()));
    }
    if !p.feller_satisfied() {
        log::warn!("Feller condition 2κθ >= ξ² fails ({} < {})", 2.0 * p.kappa * p.theta, p.xi * p.xi);
    }
    let mut rng = stream(seed, 0);
    let mut v = match v0 {
        Some(v) if v >= 0.0 => v,
        Some(v) => return Err(Error::Domain(format!("initial variance must be non-negative, got {v}"))),
        None => {
            let (shape, rate) = p.stationary_gamma();
            Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?.sample(&mut rng)
        }
    };
    let dt = day_fraction_of_year / n as f64;
    let sdt = dt.sqrt();
    let rho_c = (1.0 - p.rho * p.rho).sqrt();
    let mut variance = Vec::with_capacity(n + 1);
    let mut increments = Vec::with_capacity(n);
    let mut shocks = Vec::with_capacity(n);
    variance.push(v);
    for _ in 0..n {
        let z = normal(&mut rng);
        let zb = p.rho * z + rho_c * normal(&mut rng);
        let sv = v.sqrt();
        increments.push(sv * sdt * z);
        shocks.push(z);
        v = (v + p.kappa * (p.theta - v) * dt + p.xi * sv * sdt * zb).max(0.0);
        variance.push(v);
    }
    Ok(HestonPath { variance, increments, shocks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstParams {
    pub a: f64,
    pub alpha: f64,
    pub b: f64,
    pub beta: f64,
    #[serde(default = "default_tau")]
    pub tau_db: f64,
    #[serde(default = "default_window")]
    pub window: (f64, f64),
    #[serde(default = "default_true")]
    pub recenter_vb: bool,
    /// Load volatility-burst shocks on the price Brownian instead of an
    /// independent one.
    #[serde(default)]
    pub same_brownian: bool,
}

fn default_tau() -> f64 {
    0.5
}
fn default_window() -> (f64, f64) {
    (0.475, 0.525)
}
fn default_true() -> bool {
    true
}

impl BurstParams {
    /// Flash crash of `a` with volatility burst `b` around mid-day.
    pub fn new(a: f64, alpha: f64, b: f64, beta: f64) -> Self {
        Self { a, alpha, b, beta, tau_db: 0.5, window: default_window(), recenter_vb: true, same_brownian: false }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.window;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Domain(format!("burst window ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")));
        }
        if !(lo < self.tau_db && self.tau_db < hi) {
            return Err(Error::Domain(format!("tau_db {} must lie inside the window", self.tau_db)));
        }
        if self.a != 0.0 && !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(Error::Domain(format!("beta must lie in [0, 1/2), got {}", self.beta)));
        }
        if !(self.b >= 0.0) {
            return Err(Error::Domain(format!("b must be non-negative, got {}", self.b)));
        }
        Ok(())
    }
}

/// `∫_{t1}^{t2} sign(s - τ) |τ - s|^{-p} ds` for `t1 <= t2`.
fn signed_power_integral(t1: f64, t2: f64, tau: f64, p: f64) -> f64 {
    let e = 1.0 - p;
    let mut total = 0.0;
    if t1 < tau {
        let b = t2.min(tau);
        total += ((tau - b).powf(e) - (tau - t1).powf(e)) / e;
    }
    if t2 > tau {
        let a = t1.max(tau);
        total += ((t2 - tau).powf(e) - (a - tau).powf(e)) / e;
    }
    total
}

/// `∫_{t1}^{t2} |τ - s|^{-p} ds` for `t1 <= t2`.
fn abs_power_integral(t1: f64, t2: f64, tau: f64, p: f64) -> f64 {
    let e = 1.0 - p;
    let mut total = 0.0;
    if t1 < tau {
        let b = t2.min(tau);
        total += ((tau - t1).powf(e) - (tau - b).powf(e)) / e;
    }
    if t2 > tau {
        let a = t1.max(tau);
        total += ((t2 - tau).powf(e) - (a - tau).powf(e)) / e;
    }
    total
}

/// Cumulative drift-burst return from the window start to `τ_db`.
pub fn cumulative_burst_return(bp: &BurstParams, day_fraction_of_year: f64) -> f64 {
    bp.a * day_fraction_of_year * signed_power_integral(bp.window.0, bp.tau_db, bp.tau_db, bp.alpha)
}

/// Adds drift-burst and volatility-burst increments on a regular grid of
/// `increments.len()` steps over the day. `price_shocks` are the standard
/// normal shocks of the price Brownian, used when `same_brownian` is set.
pub fn inject_bursts(
    increments: &[f64],
    price_shocks: Option<&[f64]>,
    bp: &BurstParams,
    day_fraction_of_year: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    bp.validate()?;
    let n = increments.len();
    let mut out = increments.to_vec();
    if n == 0 {
        return Ok(out);
    }
    let (lo, hi) = bp.window;
    let step = 1.0 / n as f64;
    let first = ((lo / step).floor() as usize).min(n - 1);
    let last = ((hi / step).ceil() as usize).min(n);
    let mut vb = Vec::with_capacity(last - first);
    let mut rng = stream(seed, 1);
    for (i, inc) in out.iter_mut().enumerate().take(last).skip(first) {
        let t1 = (i as f64 * step).max(lo);
        let t2 = ((i + 1) as f64 * step).min(hi);
        if t2 <= t1 {
            vb.push(0.0);
            continue;
        }
        if bp.a != 0.0 {
            *inc += bp.a * day_fraction_of_year * signed_power_integral(t1, t2, bp.tau_db, bp.alpha);
        }
        if bp.b > 0.0 {
            let var = bp.b * bp.b * day_fraction_of_year * abs_power_integral(t1, t2, bp.tau_db, 2.0 * bp.beta);
            let z = match (bp.same_brownian, price_shocks) {
                (true, Some(s)) => s[i],
                (true, None) => return Err(Error::Input("same_brownian bursts need the price shocks".into())),
                (false, _) => normal(&mut rng),
            };
            vb.push(var.sqrt() * z);
        } else {
            vb.push(0.0);
        }
    }
    if bp.b > 0.0 && bp.recenter_vb {
        let mean = vb.iter().sum::<f64>() / vb.len() as f64;
        vb.iter_mut().for_each(|v| *v -= mean);
    }
    for (k, v) in vb.into_iter().enumerate() {
        out[first + k] += v;
    }
    Ok(out)
}

/// `θ` scaling of the volatility burst; `σ^vb = b sqrt(θ) / |τ - t|^β`.
/// [`inject_bursts`] takes `b` already multiplied by `sqrt(θ)`.
pub fn vb_scale(b: f64, theta: f64) -> f64 {
    b * theta.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpParams {
    pub psi: f64,
    pub lambda: f64,
    #[serde(default = "default_upsilon")]
    pub upsilon: f64,
    /// Log-return represented by one unit of jump size in the Lévy density.
    #[serde(default = "default_size_unit")]
    pub size_unit: f64,
}

fn default_upsilon() -> f64 {
    0.5
}
pub(crate) fn default_size_unit() -> f64 {
    0.01
}

/// Per-side `∫ x² ν(dx) = ψ Γ(2 - υ) λ^{υ - 2}` in size units, per year.
pub fn jump_second_moment(jp: &JumpParams) -> f64 {
    jp.psi * gamma(2.0 - jp.upsilon) * jp.lambda.powf(jp.upsilon - 2.0)
}

/// `ψ` such that jumps carry `target_share` of expected quadratic variation.
pub fn calibrate_jump_intensity(target_share: f64, hp: &HestonParams, lambda: f64, upsilon: f64, size_unit: f64) -> Result<f64> {
    if !(target_share > 0.0 && target_share < 1.0) {
        return Err(Error::Domain(format!("target share must lie in (0, 1), got {target_share}")));
    }
    let per_psi = size_unit * size_unit * 2.0 * gamma(2.0 - upsilon) * lambda.powf(upsilon - 2.0);
    Ok(target_share / (1.0 - target_share) * hp.theta / per_psi)
}

/// One increment of a positive tempered stable subordinator with index
/// 1/2: stable proposals `c / Z²` accepted with probability `exp(-λ x)`.
fn tempered_stable_half(psi: f64, lambda: f64, dt: f64, rng: &mut impl Rng) -> f64 {
    let c = 2.0 * std::f64::consts::PI * psi * psi * dt * dt;
    loop {
        let z = normal(rng);
        let x = c / (z * z);
        let u: f64 = rng.gen();
        if u <= (-lambda * x).exp() {
            return x;
        }
    }
}

/// Jump increments over `n` steps of one day: difference of two
/// independent one-sided tempered stable streams, scaled by `size_unit`.
pub fn simulate_tempered_stable(jp: &JumpParams, n: usize, day_fraction_of_year: f64, seed: u64) -> Result<Vec<f64>> {
    if (jp.upsilon - 0.5).abs() > 1e-12 {
        return Err(Error::Unsupported(format!(
            "tempered stable simulation is exact only for upsilon = 0.5, got {}",
            jp.upsilon
        )));
    }
    if !(jp.psi >= 0.0 && jp.lambda > 0.0 && jp.size_unit > 0.0) {
        return Err(Error::Domain("jump psi must be >= 0, lambda and size_unit > 0".into()));
    }
    if jp.psi == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let dt = day_fraction_of_year / n as f64;
    let mut rng = stream(seed, 2);
    Ok((0..n)
        .map(|_| {
            let up = tempered_stable_half(jp.psi, jp.lambda, dt, &mut rng);
            let down = tempered_stable_half(jp.psi, jp.lambda, dt, &mut rng);
            jp.size_unit * (up - down)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub gamma: f64,
}

/// Adds `N(0, (γ s_i)²)` to each level, `s_i` being the per-tick return
/// standard deviation at that point.
pub fn add_noise(levels: &[f64], tick_sd: &[f64], np: &NoiseParams, seed: u64) -> Result<Vec<f64>> {
    if levels.len() != tick_sd.len() {
        return Err(Error::Input(format!(
            "levels and volatility path differ in length ({} vs {})",
            levels.len(),
            tick_sd.len()
        )));
    }
    if !(np.gamma >= 0.0) {
        return Err(Error::Domain(format!("noise gamma must be non-negative, got {}", np.gamma)));
    }
    if np.gamma == 0.0 {
        return Ok(levels.to_vec());
    }
    let mut rng = stream(seed, 3);
    Ok(levels.iter().zip(tick_sd).map(|(&x, &s)| x + np.gamma * s * normal(&mut rng)).collect())
}

/// Adds `jump_size` to every level observed at or after `jump_time`.
pub fn inject_fixed_jump(levels: &[f64], times: &[f64], jump_size: f64, jump_time: f64) -> Result<Vec<f64>> {
    if levels.len() != times.len() || levels.is_empty() {
        return Err(Error::Input("levels and times must be non-empty and aligned".into()));
    }
    if jump_time < times[0] || jump_time > times[times.len() - 1] {
        return Err(Error::Domain(format!("jump time {jump_time} lies outside the sample")));
    }
    Ok(levels.iter().zip(times).map(|(&x, &t)| if t >= jump_time { x + jump_size } else { x }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    /// Either `psi` or `target_share` must be given.
    #[serde(default)]
    pub psi: Option<f64>,
    #[serde(default)]
    pub target_share: Option<f64>,
    pub lambda: f64,
    #[serde(default = "default_upsilon")]
    pub upsilon: f64,
    #[serde(default = "default_size_unit")]
    pub size_unit: f64,
}

impl JumpSpec {
    /// The simulation study's jumps: `λ = 3`, 20% of quadratic variation.
    pub fn study() -> Self {
        Self { psi: None, target_share: Some(0.2), lambda: 3.0, upsilon: 0.5, size_unit: default_size_unit() }
    }

    pub fn resolve(&self, hp: &HestonParams) -> Result<JumpParams> {
        let psi = match (self.psi, self.target_share) {
            (Some(p), None) => p,
            (None, Some(s)) => calibrate_jump_intensity(s, hp, self.lambda, self.upsilon, self.size_unit)?,
            _ => return Err(Error::Config("jumps need exactly one of psi or target_share".into())),
        };
        Ok(JumpParams { psi, lambda: self.lambda, upsilon: self.upsilon, size_unit: self.size_unit })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedJump {
    pub size: f64,
    /// Fraction of the day.
    pub time: f64,
}

/// Declarative description of a simulated trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dfy")]
    pub day_fraction_of_year: f64,
    #[serde(default = "default_session")]
    pub session_seconds: f64,
    #[serde(default)]
    pub origin_ms: i64,
    #[serde(default = "default_price0")]
    pub price0: f64,
    /// Fixed initial variance; drawn from the stationary law when absent.
    #[serde(default)]
    pub v0: Option<f64>,
    #[serde(default)]
    pub heston: HestonParams,
    #[serde(default)]
    pub burst: Option<BurstParams>,
    #[serde(default)]
    pub jumps: Option<JumpSpec>,
    #[serde(default)]
    pub noise: Option<NoiseParams>,
    #[serde(default)]
    pub fixed_jump: Option<FixedJump>,
}

fn default_n() -> usize {
    23_400
}
fn default_dfy() -> f64 {
    1.0 / TRADING_DAYS_PER_YEAR
}
fn default_session() -> f64 {
    SESSION_SECONDS
}
fn default_price0() -> f64 {
    100.0
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n: default_n(),
            seed: 0,
            day_fraction_of_year: default_dfy(),
            session_seconds: default_session(),
            origin_ms: 0,
            price0: default_price0(),
            v0: None,
            heston: HestonParams::default(),
            burst: None,
            jumps: None,
            noise: None,
            fixed_jump: None,
        }
    }
}

impl ScenarioSpec {
    /// Null design of the simulation study: Heston, jumps, noise `γ = 0.5`.
    pub fn study_null() -> Self {
        Self { jumps: Some(JumpSpec::study()), noise: Some(NoiseParams { gamma: 0.5 }), ..Self::default() }
    }

    /// Burst design with `a = 3` and `b = 0.15`.
    pub fn study_burst(alpha: f64, beta: f64) -> Self {
        Self { burst: Some(BurstParams::new(3.0, alpha, 0.15, beta)), ..Self::study_null() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.session_seconds > 0.0 && self.day_fraction_of_year > 0.0 && self.price0 > 0.0) {
            return Err(Error::Config("session_seconds, day_fraction_of_year and price0 must be positive".into()));
        }
        self.heston.validate()?;
        if let Some(b) = &self.burst {
            b.validate()?;
        }
        if let Some(j) = &self.jumps {
            j.resolve(&self.heston)?;
        }
        if let Some(fj) = &self.fixed_jump {
            if !(0.0..=1.0).contains(&fj.time) {
                return Err(Error::Domain(format!("fixed jump time {} must be a fraction of the day", fj.time)));
            }
        }
        Ok(())
    }

    /// Tick spacing in milliseconds.
    pub fn tick_ms(&self) -> i64 {
        (self.session_seconds * 1000.0 / self.n as f64).round() as i64
    }
}

/// A simulated day on the regular grid `i · session_seconds / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDay {
    /// Seconds from the session start, `n + 1` points.
    pub times: Vec<f64>,
    /// Efficient log-prices (with bursts and jumps), starting at `ln(price0)`.
    pub efficient: Vec<f64>,
    /// Observed log-prices (efficient plus noise).
    pub observed: Vec<f64>,
    pub variance: Vec<f64>,
    pub jump_increments: Vec<f64>,
    pub seed: u64,
}

/// Simulates the full day described by `spec` with seed `seed`.
pub fn simulate_day(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedDay> {
    spec.validate()?;
    let n = spec.n;
    let dfy = spec.day_fraction_of_year;
    let path = simulate_heston(&spec.heston, n, dfy, spec.v0, seed)?;
    let mut inc = path.increments.clone();
    if let Some(bp) = &spec.burst {
        let scaled = BurstParams { b: vb_scale(bp.b, spec.heston.theta), ..*bp };
        inc = inject_bursts(&inc, Some(&path.shocks), &scaled, dfy, seed)?;
    }
    let jump_increments = match &spec.jumps {
        Some(js) => simulate_tempered_stable(&js.resolve(&spec.heston)?, n, dfy, seed)?,
        None => vec![0.0; n],
    };
    for (x, j) in inc.iter_mut().zip(&jump_increments) {
        *x += j;
    }
    let dt_sec = spec.session_seconds / n as f64;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt_sec).collect();
    let mut efficient = Vec::with_capacity(n + 1);
    let mut x = spec.price0.ln();
    efficient.push(x);
    for d in &inc {
        x += d;
        efficient.push(x);
    }
    if let Some(fj) = &spec.fixed_jump {
        efficient = inject_fixed_jump(&efficient, &times, fj.size, fj.time * spec.session_seconds)?;
    }
    let observed = match &spec.noise {
        Some(np) => {
            let tick_sd: Vec<f64> = path.variance.iter().map(|v| (v * dfy / n as f64).sqrt()).collect();
            add_noise(&efficient, &tick_sd, np, seed)?
        }
        None => efficient.clone(),
    };
    Ok(SimulatedDay { times, efficient, observed, variance: path.variance, jump_increments, seed })
}

impl SimulatedDay {
    /// Observed log-prices as a series on the tick grid.
    pub fn series(&self, origin_ms: i64) -> Result<TickSeries<f64>> {
        TickSeries::new(origin_ms, self.times.clone(), self.observed.clone())
    }

    /// Quote and trade records: bid and ask straddle the observed price by
    /// one cent, with one trade per tick of exponential size.
    pub fn to_records(&self, spec: &ScenarioSpec) -> Vec<TickRecord> {
        let mut rng = stream(self.seed, 4);
        let tick_ms = spec.tick_ms();
        self.observed
            .iter()
            .enumerate()
            .map(|(i, &lp)| {
                let mid = lp.exp();
                let size: f64 = Exp1.sample(&mut rng);
                TickRecord {
                    ts_ms: spec.origin_ms + i as i64 * tick_ms,
                    bid: Some(mid - 0.005),
                    ask: Some(mid + 0.005),
                    trade_px: Some(mid),
                    trade_sz: Some(size),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::quad::integrate;

    const DFY: f64 = 1.0 / 252.0;

    #[test]
    fn stationary_law_and_feller() {
        let p = HestonParams::default();
        let (shape, rate) = p.stationary_gamma();
        assert_relative_eq!(shape, 1.40625, epsilon = 1e-12);
        assert_relative_eq!(rate, 62.5, epsilon = 1e-12);
        assert_relative_eq!(shape / rate, p.theta, epsilon = 1e-15);
        assert!(p.feller_satisfied());
        assert!(HestonParams { xi: -1.0, ..p }.validate().is_err());
        assert!(simulate_heston(&p, 1, DFY, None, 0).is_err());
    }

    #[test]
    fn constant_vol_limit() {
        let p = HestonParams { xi: 1e-12, ..HestonParams::default() };
        let mut rets = Vec::new();
        for seed in 0..2000 {
            let path = simulate_heston(&p, 390, DFY, Some(p.theta), seed).unwrap();
            assert!(path.variance.iter().all(|v| (v - p.theta).abs() < 1e-9));
            rets.push(path.increments.iter().sum::<f64>());
        }
        let sd = (rets.iter().map(|r| r * r).sum::<f64>() / rets.len() as f64).sqrt();
        let oracle = (p.theta / 252.0).sqrt();
        assert!((sd / oracle - 1.0).abs() < 0.05, "sd {sd} vs {oracle}");
    }

    #[test]
    fn long_run_variance_mean() {
        let p = HestonParams::default();
        // a 10,000 day path, sampled coarsely
        let path = simulate_heston(&p, 10_000 * 26, 10_000.0 * DFY, None, 5).unwrap();
        let m = path.variance.iter().sum::<f64>() / path.variance.len() as f64;
        assert!((m / p.theta - 1.0).abs() < 0.05, "mean {m}");
    }

    #[test]
    fn burst_closed_forms_match_quadrature() {
        for (alpha, expected) in [(0.55, 0.005_027), (0.75, 0.018_93)] {
            let bp = BurstParams::new(3.0, alpha, 0.0, 0.0);
            let closed = cumulative_burst_return(&bp, DFY);
            let oracle = -3.0 * DFY * 0.025f64.powf(1.0 - alpha) / (1.0 - alpha);
            assert_relative_eq!(closed, oracle, max_relative = 1e-12);
            // x = τ - s = u⁴ removes the endpoint singularity
            let quad = -3.0 * DFY * integrate(|u: f64| 4.0 * u.powf(3.0 - 4.0 * alpha), 0.0, 0.025f64.powf(0.25), 1e-12);
            assert!((closed - quad).abs() < 1e-6 * closed.abs());
            assert!((closed.abs() - expected).abs() < 1e-5, "{alpha}: {closed}");
        }
    }

    #[test]
    fn injected_drift_sums_to_closed_form() {
        let bp = BurstParams::new(3.0, 0.65, 0.0, 0.0);
        let n = 23_400;
        let out = inject_bursts(&vec![0.0; n], None, &bp, DFY, 1).unwrap();
        let pre: f64 = out[..n / 2].iter().sum();
        let post: f64 = out[n / 2..].iter().sum();
        let c = cumulative_burst_return(&bp, DFY);
        assert_relative_eq!(pre, c, max_relative = 1e-10);
        assert_relative_eq!(post, -c, max_relative = 1e-10);
        assert!(c < 0.0);
        let zero = inject_bursts(&[1.0, 2.0], None, &BurstParams::new(0.0, 0.5, 0.0, 0.0), DFY, 1).unwrap();
        assert_eq!(zero, vec![1.0, 2.0]);
        assert!(inject_bursts(&[0.0; 10], None, &BurstParams { window: (0.6, 1.2), ..bp }, DFY, 1).is_err());
    }

    #[test]
    fn volatility_burst_is_recentered() {
        let bp = BurstParams::new(0.0, 0.5, 0.15 * 0.15, 0.4);
        let n = 23_400;
        let out = inject_bursts(&vec![0.0; n], None, &bp, DFY, 3).unwrap();
        assert!(out.iter().sum::<f64>().abs() < 1e-15);
        assert!(out[..10_000].iter().all(|&x| x == 0.0));
        assert!(out[11_500..11_900].iter().any(|&x| x != 0.0));
        let shocks = vec![1.0; n];
        let same = inject_bursts(&vec![0.0; n], Some(&shocks), &BurstParams { same_brownian: true, recenter_vb: false, ..bp }, DFY, 3).unwrap();
        assert!(same.iter().all(|&x| x >= 0.0));
    }

    fn study_jumps() -> JumpParams {
        JumpSpec::study().resolve(&HestonParams::default()).unwrap()
    }

    #[test]
    fn jump_calibration_closed_form() {
        let hp = HestonParams::default();
        let psi = calibrate_jump_intensity(0.2, &hp, 3.0, 0.5, 1.0).unwrap();
        let oracle = 0.25 * 0.0225 / (2.0 * gamma(1.5) * 3f64.powf(-1.5));
        assert_relative_eq!(psi, oracle, max_relative = 1e-12);
        assert!(calibrate_jump_intensity(1e-9, &hp, 3.0, 0.5, 1.0).unwrap() < 1e-9);
        // doubling λ^{2-υ} doubles ψ
        let l2 = 3.0 * 2f64.powf(1.0 / 1.5);
        assert_relative_eq!(calibrate_jump_intensity(0.2, &hp, l2, 0.5, 1.0).unwrap(), 2.0 * psi, max_relative = 1e-12);
        assert!(calibrate_jump_intensity(1.0, &hp, 3.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn tempered_stable_moments() {
        let jp = study_jumps();
        assert!(simulate_tempered_stable(&JumpParams { upsilon: 0.7, ..jp }, 10, DFY, 0).is_err());
        assert!(simulate_tempered_stable(&JumpParams { psi: 0.0, ..jp }, 10, DFY, 0).unwrap().iter().all(|&x| x == 0.0));
        let days = 5000;
        let n = 390;
        let (mut qv, mut sum, mut sum2) = (0.0, 0.0, 0.0);
        for d in 0..days {
            let j = simulate_tempered_stable(&jp, n, DFY, d).unwrap();
            qv += j.iter().map(|x| x * x).sum::<f64>();
            let s: f64 = j.iter().sum();
            sum += s;
            sum2 += s * s;
        }
        let qv_mean = qv / days as f64;
        let oracle = DFY * 2.0 * jump_second_moment(&jp) * jp.size_unit * jp.size_unit;
        assert!((qv_mean / oracle - 1.0).abs() < 0.05, "{qv_mean} vs {oracle}");
        let mean = sum / days as f64;
        let se = ((sum2 / days as f64 - mean * mean) / days as f64).sqrt();
        assert!(mean.abs() < 3.0 * se);
    }

    #[test]
    fn noise_level_and_identity() {
        let levels = vec![0.0; 23_401];
        let sd = vec![1e-4; 23_401];
        assert_eq!(add_noise(&levels, &sd, &NoiseParams { gamma: 0.0 }, 1).unwrap(), levels);
        let noisy = add_noise(&levels, &sd, &NoiseParams { gamma: 0.5 }, 1).unwrap();
        let s = (noisy.iter().map(|x| x * x).sum::<f64>() / noisy.len() as f64).sqrt();
        assert!((s / 0.5e-4 - 1.0).abs() < 0.05);
        assert!(add_noise(&levels, &sd[..5], &NoiseParams { gamma: 0.5 }, 1).is_err());
    }

    #[test]
    fn noise_inherits_volatility_persistence() {
        let spec = ScenarioSpec { noise: Some(NoiseParams { gamma: 0.5 }), ..ScenarioSpec::default() };
        let day = simulate_day(&spec, 9).unwrap();
        let e2: Vec<f64> = day.observed.iter().zip(&day.efficient).map(|(o, e)| (o - e).powi(2)).collect();
        let m = e2.iter().sum::<f64>() / e2.len() as f64;
        let lag = 100;
        let c: f64 = e2[lag..].iter().zip(&e2).map(|(a, b)| (a - m) * (b - m)).sum::<f64>();
        assert!(c > 0.0);
    }

    #[test]
    fn fixed_jump() {
        let times = [0.0, 1.0, 2.0];
        assert_eq!(inject_fixed_jump(&[1.0, 1.0, 1.0], &times, 0.0, 1.0).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(inject_fixed_jump(&[1.0, 1.0, 1.0], &times, 0.5, 1.0).unwrap(), vec![1.0, 1.5, 1.5]);
        assert!(inject_fixed_jump(&[1.0, 1.0, 1.0], &times, 0.5, 3.0).is_err());
    }

    #[test]
    fn scenario_round_trip_and_determinism() {
        let spec = ScenarioSpec { seed: 7, ..ScenarioSpec::study_burst(0.65, 0.2) };
        let text = spec.to_toml().unwrap();
        assert_eq!(ScenarioSpec::from_toml(&text).unwrap(), spec);
        let a = simulate_day(&spec, 7).unwrap();
        let b = simulate_day(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.observed, simulate_day(&spec, 8).unwrap().observed);
        assert!(ScenarioSpec::from_toml("n = 1").is_err());
        assert!(ScenarioSpec::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn annualized_return_std() {
        let spec = ScenarioSpec { n: 390, ..ScenarioSpec::default() };
        let rets: Vec<f64> = (0..4000)
            .map(|s| {
                let d = simulate_day(&spec, s).unwrap();
                d.efficient.last().unwrap() - d.efficient[0]
            })
            .collect();
        let sd = (rets.iter().map(|r| r * r).sum::<f64>() / rets.len() as f64 * 252.0).sqrt();
        assert!((sd - 0.15).abs() < 0.015, "{sd}");
    }
}
