//! Local parametric burst model
//! `dX = μ (T - t)^{-α} dt + σ (T - t)^{-β} dW` on `[0, T]`: exact Gaussian
//! likelihood, maximum likelihood fit and likelihood-ratio tests of
//! `α = 0` (no drift burst) and `β = 0` (no volatility burst).
//!
//! For fixed `(α, β)` the increments are `N(μ a_i, σ² v_i)`, so `μ` and `σ`
//! are profiled out in closed form and only `(α, β)` is searched.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub const ALPHA_MAX: f64 = 0.99;
pub const BETA_MAX: f64 = 0.49;
pub const MIN_INCREMENTS: usize = 50;
const LR_TOLERANCE: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// `∫_{t1}^{t2} (T - s)^{-p} ds`.
fn power_integral(t1: f64, t2: f64, end: f64, p: f64) -> f64 {
    let e = 1.0 - p;
    ((end - t1).powf(e) - (end - t2).powf(e)) / e
}

fn check_inputs(times: &[f64], increments: &[f64], end: f64) -> Result<()> {
    if times.len() != increments.len() + 1 || increments.is_empty() {
        return Err(Error::Input(format!(
            "need one more time than increments, got {} times and {} increments",
            times.len(),
            increments.len()
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("times must be strictly increasing".into()));
    }
    if increments.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("increments must be finite".into()));
    }
    if !(times[times.len() - 1] < end) {
        return Err(Error::Domain(format!("last time {} must precede the explosion time {end}", times[times.len() - 1])));
    }
    Ok(())
}

/// Gaussian log-likelihood of `increments` observed between consecutive
/// `times`; `-∞` when a variance is not positive.
pub fn loglik(theta: &Theta, times: &[f64], increments: &[f64], end: f64) -> Result<f64> {
    check_inputs(times, increments, end)?;
    Ok(loglik_unchecked(theta, times, increments, end))
}

fn loglik_unchecked(theta: &Theta, times: &[f64], increments: &[f64], end: f64) -> f64 {
    let mut ll = 0.0;
    for (w, &x) in times.windows(2).zip(increments) {
        let m = theta.mu * power_integral(w[0], w[1], end, theta.alpha);
        let v = theta.sigma * theta.sigma * power_integral(w[0], w[1], end, 2.0 * theta.beta);
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        ll -= HALF_LN_2PI + 0.5 * v.ln() + 0.5 * (x - m).powi(2) / v;
    }
    ll
}

/// Data on a rescaled clock `u = (t - t_0) / c` with the explosion at `u = 1`.
#[derive(Debug, Clone)]
struct Profile {
    /// `ln(1 - u_i)` at every observation time.
    log_gap: Vec<f64>,
    increments: Vec<f64>,
}

impl Profile {
    fn new(times: &[f64], end: f64, increments: &[f64]) -> Self {
        let t0 = times[0];
        let scale = end - t0;
        Self { log_gap: times.iter().map(|t| ((end - t) / scale).ln()).collect(), increments: increments.to_vec() }
    }

    /// Interval integrals of `(1 - u)^{-p}`, sharing endpoint powers.
    fn basis(&self, p: f64, out: &mut Vec<f64>) {
        let e = 1.0 - p;
        out.clear();
        let mut prev = (e * self.log_gap[0]).exp();
        for &l in &self.log_gap[1..] {
            let next = (e * l).exp();
            out.push((prev - next) / e);
            prev = next;
        }
    }

    /// `(ℓ, μ̂, σ̂)` at fixed `(α, β)`.
    fn at(&self, alpha: f64, beta: f64) -> (f64, f64, f64) {
        let n = self.increments.len() as f64;
        let mut a = Vec::with_capacity(self.increments.len());
        let mut v = Vec::with_capacity(self.increments.len());
        self.basis(alpha, &mut a);
        self.basis(2.0 * beta, &mut v);
        let mut sxa = 0.0;
        let mut saa = 0.0;
        let mut sum_ln_v = 0.0;
        for ((&ai, &vi), &x) in a.iter().zip(&v).zip(&self.increments) {
            sxa += ai * x / vi;
            saa += ai * ai / vi;
            sum_ln_v += vi.ln();
        }
        let mu = if saa > 0.0 { sxa / saa } else { 0.0 };
        let s2 = a.iter().zip(&v).zip(&self.increments).map(|((&ai, &vi), &x)| (x - mu * ai).powi(2) / vi).sum::<f64>() / n;
        if !(s2 > 0.0) || !sum_ln_v.is_finite() {
            return (f64::NEG_INFINITY, mu, 0.0);
        }
        let ll = -n * HALF_LN_2PI - 0.5 * sum_ln_v - 0.5 * n * s2.ln() - 0.5 * n;
        (ll, mu, s2.sqrt())
    }

    fn value(&self, alpha: f64, beta: f64) -> f64 {
        self.at(alpha.clamp(0.0, ALPHA_MAX), beta.clamp(0.0, BETA_MAX)).0
    }
}

struct Full<'a>(&'a Profile);

impl CostFunction for Full<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        // leaving the box is penalized by distance so the simplex turns back
        let (a, b) = (p[0], p[1]);
        let excess = (-a).max(0.0) + (a - ALPHA_MAX).max(0.0) + (-b).max(0.0) + (b - BETA_MAX).max(0.0);
        let v = -self.0.value(a, b);
        Ok(if v.is_finite() { v + 1e6 * excess } else { 1e300 })
    }
}

/// One free coordinate with the other fixed.
struct Line<'a> {
    profile: &'a Profile,
    fixed: f64,
    free_is_alpha: bool,
}

impl CostFunction for Line<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> std::result::Result<f64, argmin::core::Error> {
        let v = if self.free_is_alpha { self.profile.value(*x, self.fixed) } else { self.profile.value(self.fixed, *x) };
        Ok(if v.is_finite() { -v } else { 1e300 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Optimum {
    alpha: f64,
    beta: f64,
    ll: f64,
    converged: bool,
}

fn nelder_mead(profile: &Profile, start: (f64, f64)) -> Option<Optimum> {
    let (a0, b0) = start;
    let da = if a0 + 0.1 <= ALPHA_MAX { 0.1 } else { -0.1 };
    let db = if b0 + 0.05 <= BETA_MAX { 0.05 } else { -0.05 };
    let simplex = vec![vec![a0, b0], vec![a0 + da, b0], vec![a0, b0 + db]];
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-8).ok()?;
    let res = Executor::new(Full(profile), solver).configure(|s| s.max_iters(1000)).run().ok()?;
    let state = res.state();
    let p = state.get_best_param()?;
    let (alpha, beta) = (p[0].clamp(0.0, ALPHA_MAX), p[1].clamp(0.0, BETA_MAX));
    let converged = state.get_iter() < state.get_max_iters();
    let ll = profile.value(alpha, beta);
    ll.is_finite().then_some(Optimum { alpha, beta, ll, converged })
}

fn line_search(profile: &Profile, fixed: f64, free_is_alpha: bool) -> Option<Optimum> {
    let upper = if free_is_alpha { ALPHA_MAX } else { BETA_MAX };
    let solver = BrentOpt::new(0.0, upper).set_tolerance(1e-10, 1e-12);
    let res = Executor::new(Line { profile, fixed, free_is_alpha }, solver)
        .configure(|s| s.max_iters(500))
        .run()
        .ok()?;
    let state = res.state();
    let x = state.get_best_param().copied()?;
    let converged = state.get_iter() < state.get_max_iters();
    // Brent only finds a local optimum; the grid guards the endpoints.
    let mut best = (x, if free_is_alpha { profile.value(x, fixed) } else { profile.value(fixed, x) });
    for k in 0..=10 {
        let g = upper * k as f64 / 10.0;
        let v = if free_is_alpha { profile.value(g, fixed) } else { profile.value(fixed, g) };
        if v > best.1 + 1e-9 {
            best = (g, v);
        }
    }
    let (alpha, beta) = if free_is_alpha { (best.0, fixed) } else { (fixed, best.0) };
    best.1.is_finite().then_some(Optimum { alpha, beta, ll: best.1, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamFit {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub loglik: f64,
    pub converged: bool,
    pub lr_drift: f64,
    pub lr_vol: f64,
    pub pvalue_drift: f64,
    pub pvalue_vol: f64,
    /// Log-likelihoods of the `α = 0` and `β = 0` restrictions.
    pub loglik_no_drift: f64,
    pub loglik_no_vol: f64,
    pub n: usize,
}

impl ParamFit {
    pub fn theta(&self) -> Theta {
        Theta { mu: self.mu, sigma: self.sigma, alpha: self.alpha, beta: self.beta }
    }
}

/// Likelihood-ratio statistic `2 (ℓ_full - ℓ_restricted)` and its `χ²₁`
/// p-value.
pub fn lr_test(restricted_loglik: f64, full_loglik: f64) -> Result<(f64, f64)> {
    let gain = full_loglik - restricted_loglik;
    if gain < -LR_TOLERANCE * (1.0 + full_loglik.abs()) {
        return Err(Error::Fit(format!(
            "restricted log-likelihood {restricted_loglik} exceeds the full one {full_loglik}"
        )));
    }
    let stat = (2.0 * gain).max(0.0);
    let chi = ChiSquared::new(1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((stat, if stat == 0.0 { 1.0 } else { chi.sf(stat) }))
}

const ALPHA_STARTS: [f64; 3] = [0.0, 0.3, 0.6];
const BETA_STARTS: [f64; 3] = [0.0, 0.2, 0.4];

/// Maximum likelihood fit with the explosion at `end`, plus both
/// likelihood-ratio tests.
pub fn fit_mle(times: &[f64], increments: &[f64], end: f64) -> Result<ParamFit> {
    check_inputs(times, increments, end)?;
    if increments.len() < MIN_INCREMENTS {
        return Err(Error::Input(format!("need at least {MIN_INCREMENTS} increments, got {}", increments.len())));
    }
    let scale = end - times[0];
    let profile = Profile::new(times, end, increments);

    let no_drift = line_search(&profile, 0.0, false);
    let no_vol = line_search(&profile, 0.0, true);
    let mut starts: Vec<(f64, f64)> = ALPHA_STARTS.iter().flat_map(|&a| BETA_STARTS.iter().map(move |&b| (a, b))).collect();
    // starting from the restricted optima keeps the fit nested
    starts.extend(no_drift.iter().map(|o| (o.alpha, o.beta)));
    starts.extend(no_vol.iter().map(|o| (o.alpha, o.beta)));
    let mut candidates: Vec<Optimum> = starts.iter().filter_map(|&s| nelder_mead(&profile, s)).collect();
    candidates.extend(no_drift);
    candidates.extend(no_vol);
    let best = candidates
        .iter()
        .copied()
        .max_by(|a, b| a.ll.total_cmp(&b.ll))
        .ok_or_else(|| Error::Fit(format!("no start converged on {} increments", increments.len())))?;
    let (no_drift, no_vol) = match (no_drift, no_vol) {
        (Some(d), Some(v)) => (d, v),
        _ => return Err(Error::Fit("restricted fits failed".into())),
    };

    let (ll_unit, mu_u, sigma_u) = profile.at(best.alpha, best.beta);
    let mu = mu_u * scale.powf(best.alpha - 1.0);
    let sigma = sigma_u * scale.powf(best.beta - 0.5);
    let theta = Theta { mu, sigma, alpha: best.alpha, beta: best.beta };
    let loglik = loglik_unchecked(&theta, times, increments, end);
    if !loglik.is_finite() || !ll_unit.is_finite() {
        return Err(Error::Fit("non-finite log-likelihood at the optimum".into()));
    }
    let (lr_drift, pvalue_drift) = lr_test(no_drift.ll, best.ll)?;
    let (lr_vol, pvalue_vol) = lr_test(no_vol.ll, best.ll)?;
    // the profile on the rescaled clock equals ℓ on the original one
    let shift = loglik - ll_unit;
    Ok(ParamFit {
        mu,
        sigma,
        alpha: best.alpha,
        beta: best.beta,
        loglik,
        converged: best.converged,
        lr_drift,
        lr_vol,
        pvalue_drift,
        pvalue_vol,
        loglik_no_drift: no_drift.ll + shift,
        loglik_no_vol: no_vol.ll + shift,
        n: increments.len(),
    })
}

/// Exact draws from the model on `times`, explosion at `end`.
pub fn simulate_window(theta: &Theta, times: &[f64], end: f64, seed: u64) -> Result<Vec<f64>> {
    if times.len() < 2 || !(times[times.len() - 1] < end) {
        return Err(Error::Domain("times must precede the explosion time".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(times
        .windows(2)
        .map(|w| {
            let m = theta.mu * power_integral(w[0], w[1], end, theta.alpha);
            let v = theta.sigma * theta.sigma * power_integral(w[0], w[1], end, 2.0 * theta.beta);
            let z: f64 = StandardNormal.sample(&mut rng);
            m + v.sqrt() * z
        })
        .collect())
}
