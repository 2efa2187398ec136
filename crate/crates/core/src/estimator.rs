//! Local (spot) drift and long-run variance estimators on irregular time
//! grids, and Newey–West automatic lag selection.
//!
//! Every estimator takes a sorted slice of increment times and a parallel
//! slice of increments. Increment `i` carries weight
//! `K((times[i] - t) / h)`; only increments with `times[i] <= t` and inside
//! the truncated kernel window contribute.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, ParzenWindow};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotEstimates<T> {
    pub t: T,
    pub mu_hat: T,
    pub lrv_hat: T,
    pub n_effective: usize,
}

/// Number of HAC lags `L_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagPolicy {
    /// Use exactly this many lags.
    Fixed(usize),
    /// `L_n = Q* + base_add`, with `Q*` from [`auto_lag`] on raw increments.
    /// The conventional `base_add` is `2(k_n - 1)`.
    Auto { base_add: usize },
}

impl LagPolicy {
    /// Auto policy with the pre-averaging allowance `2(k_n - 1)`.
    pub fn auto_for(k_n: usize) -> Self {
        LagPolicy::Auto { base_add: 2 * k_n.saturating_sub(1) }
    }

    /// Resolves the lag count for a set of raw increments.
    pub fn resolve<T: Scalar>(&self, raw_increments: &[T], nw: &NeweyWestConstants) -> Result<usize> {
        match *self {
            LagPolicy::Fixed(l) => Ok(l),
            LagPolicy::Auto { base_add } => Ok(auto_lag_with(raw_increments, nw)? + base_add),
        }
    }
}

/// Tuning constants of the Newey–West (1994) plug-in bandwidth for the
/// Bartlett kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeweyWestConstants {
    /// Pilot truncation `ℓ = floor(pilot_scale (n/100)^pilot_exponent)`.
    pub pilot_scale: f64,
    pub pilot_exponent: f64,
    /// `Q* = ceil(gamma_const (ŝ1/ŝ0)^{2/3} n^{rate_exponent})`.
    pub gamma_const: f64,
    pub rate_exponent: f64,
}

impl Default for NeweyWestConstants {
    fn default() -> Self {
        Self { pilot_scale: 4.0, pilot_exponent: 2.0 / 9.0, gamma_const: 1.1447, rate_exponent: 1.0 / 3.0 }
    }
}

impl NeweyWestConstants {
    pub fn pilot_lag(&self, n: usize) -> usize {
        (self.pilot_scale * (n as f64 / 100.0).powf(self.pilot_exponent)).floor() as usize
    }
}

/// Minimum sample size accepted by [`auto_lag`].
pub const AUTO_LAG_MIN_LEN: usize = 50;

/// Newey–West (1994) automatic lag `Q*` with default constants.
pub fn auto_lag<T: Scalar>(raw_increments: &[T]) -> Result<usize> {
    auto_lag_with(raw_increments, &NeweyWestConstants::default())
}

pub fn auto_lag_with<T: Scalar>(raw_increments: &[T], nw: &NeweyWestConstants) -> Result<usize> {
    let n = raw_increments.len();
    if n < AUTO_LAG_MIN_LEN {
        return Err(Error::Input(format!(
            "automatic lag selection needs at least {AUTO_LAG_MIN_LEN} increments, got {n}"
        )));
    }
    let x: Vec<f64> = raw_increments.iter().map(|v| v.f64()).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let pilot = nw.pilot_lag(n).min(n - 1);
    let autocov = |j: usize| -> f64 {
        x[j..].iter().zip(&x[..n - j]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / n as f64
    };
    let gamma0 = autocov(0);
    if gamma0 <= 0.0 {
        return Ok(0);
    }
    let (mut s0, mut s1) = (gamma0, 0.0);
    for j in 1..=pilot {
        let g = autocov(j);
        s0 += 2.0 * g;
        s1 += 2.0 * j as f64 * g;
    }
    // A non-positive pilot long-run variance leaves the plug-in undefined;
    // fall back to the pilot truncation lag.
    let q = if s0 <= 0.0 {
        pilot as f64
    } else {
        (nw.gamma_const * (s1 / s0).abs().powf(2.0 / 3.0) * (n as f64).powf(nw.rate_exponent)).ceil()
    };
    Ok((q.max(0.0) as usize).min(n / 4))
}

/// Index range `[lo, hi)` of increments inside the truncated window at `t`.
fn window<T: Scalar>(times: &[T], t: T, h: T, kernel: &KernelSpec) -> (usize, usize) {
    let hi = times.partition_point(|&s| s <= t);
    let cutoff = t - T::of(kernel.truncation_radius) * h;
    let lo = times[..hi].partition_point(|&s| s <= cutoff);
    (lo, hi)
}

fn check_inputs<T: Scalar>(times: &[T], values: &[T], t: T, h: T) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::Input(format!(
            "times and increments differ in length ({} vs {})",
            times.len(),
            values.len()
        )));
    }
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    if !t.is_finite() {
        return Err(Error::Input(format!("evaluation time must be finite, got {t}")));
    }
    Ok(())
}

/// Kernel drift estimate `(1/h) Σ K((s_i - t)/h) y_i`.
pub fn spot_drift<T: Scalar>(times: &[T], increments: &[T], t: T, h: T, kernel: &KernelSpec) -> Result<T> {
    check_inputs(times, increments, t, h)?;
    let (lo, hi) = window(times, t, h, kernel);
    if lo >= hi {
        return Err(Error::EmptyWindow(t.f64()));
    }
    let sum = (lo..hi).fold(T::zero(), |acc, i| acc + kernel.shape((times[i] - t) / h) * increments[i]);
    Ok(sum / h)
}

/// HAC long-run variance with Parzen lag weights,
/// `(1/h') [Σ (K_i y_i)² + 2 Σ_{L=1}^{L_n} w(L/L_n) Σ_i K_i K_{i+L} y_i y_{i+L}]`.
///
/// The lag count is capped at a quarter of the in-window sample size.
pub fn spot_lrv<T: Scalar>(
    times: &[T],
    increments: &[T],
    t: T,
    h_prime: T,
    kernel: &KernelSpec,
    lags: usize,
    window_fn: &ParzenWindow,
) -> Result<T> {
    spot_lrv_counted(times, increments, t, h_prime, kernel, lags, window_fn).map(|(v, _)| v)
}

fn spot_lrv_counted<T: Scalar>(
    times: &[T],
    increments: &[T],
    t: T,
    h_prime: T,
    kernel: &KernelSpec,
    lags: usize,
    window_fn: &ParzenWindow,
) -> Result<(T, usize)> {
    check_inputs(times, increments, t, h_prime)?;
    let (lo, hi) = window(times, t, h_prime, kernel);
    if lo >= hi {
        return Err(Error::EmptyWindow(t.f64()));
    }
    let n_eff = hi - lo;
    let z: Vec<T> = (lo..hi)
        .map(|i| kernel.shape((times[i] - t) / h_prime) * increments[i])
        .collect();
    let lags = effective_lags(lags, n_eff);
    let mut total = z.iter().fold(T::zero(), |acc, &v| acc + v * v);
    for l in 1..=lags {
        let w = window_fn.weight(T::of(l as f64) / T::of(lags as f64));
        let cross = z[l..].iter().zip(&z[..n_eff - l]).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        total = total + T::of(2.0) * w * cross;
    }
    Ok((total / h_prime, n_eff))
}

/// Lag count actually used for `n_eff` in-window increments.
#[inline]
pub fn effective_lags(lags: usize, n_eff: usize) -> usize {
    lags.min(n_eff / 4)
}

/// Noise-free spot volatility `sqrt((1/h') Σ K((s_i - t)/h') y_i²)`.
pub fn spot_variance_raw<T: Scalar>(
    times: &[T],
    increments: &[T],
    t: T,
    h_prime: T,
    kernel: &KernelSpec,
) -> Result<T> {
    check_inputs(times, increments, t, h_prime)?;
    let (lo, hi) = window(times, t, h_prime, kernel);
    if lo >= hi {
        return Err(Error::EmptyWindow(t.f64()));
    }
    let sum = (lo..hi).fold(T::zero(), |acc, i| {
        acc + kernel.shape((times[i] - t) / h_prime) * increments[i] * increments[i]
    });
    Ok((sum / h_prime).sqrt())
}

/// Drift and long-run variance at one time point.
#[allow(clippy::too_many_arguments)]
pub fn spot_estimates<T: Scalar>(
    times: &[T],
    increments: &[T],
    t: T,
    h: T,
    h_prime: T,
    kernel: &KernelSpec,
    lags: usize,
) -> Result<SpotEstimates<T>> {
    let mu_hat = spot_drift(times, increments, t, h, kernel)?;
    let (lrv_hat, n_effective) =
        spot_lrv_counted(times, increments, t, h_prime, kernel, lags, &ParzenWindow)?;
    Ok(SpotEstimates { t, mu_hat, lrv_hat, n_effective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn k() -> KernelSpec {
        KernelSpec::left_exponential()
    }

    fn grid(n: usize) -> Vec<f64> {
        (1..=n).map(|i| i as f64).collect()
    }

    #[test]
    fn drift_of_constant_price_is_zero() {
        let t = grid(100);
        let y = vec![0.0; 100];
        assert_eq!(spot_drift(&t, &y, 100.0, 10.0, &k()).unwrap(), 0.0);
    }

    #[test]
    fn single_increment_at_lag_zero() {
        let r = 0.37;
        assert_relative_eq!(spot_drift(&[5.0], &[r], 5.0, 1.0, &k()).unwrap(), r, epsilon = 1e-15);
        let v = spot_lrv(&[5.0], &[r], 5.0, 1.0, &k(), 0, &ParzenWindow).unwrap();
        assert_relative_eq!(v, r * r, epsilon = 1e-15);
    }

    #[test]
    fn empty_window_is_an_error() {
        let t = grid(10);
        let y = vec![1.0; 10];
        assert!(matches!(spot_drift(&t, &y, 0.5, 1.0, &k()), Err(Error::EmptyWindow(_))));
        // every observation is more than 10 bandwidths old
        assert!(matches!(spot_drift(&t, &y, 50.0, 1.0, &k()), Err(Error::EmptyWindow(_))));
        assert!(matches!(spot_lrv(&t, &y, 0.5, 1.0, &k(), 2, &ParzenWindow), Err(Error::EmptyWindow(_))));
        assert!(spot_drift(&t, &y, 5.0, 0.0, &k()).is_err());
    }

    #[test]
    fn linear_price_drift_matches_riemann_oracle() {
        // X_s = c s sampled each second; oracle: c (1 - e^{-t/h}) for the
        // untruncated kernel, with the window starting at the first tick.
        let c = 2.5e-4;
        let n = 20_000;
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let incs = vec![c; n];
        let h = 300.0;
        let t = (n - 1) as f64;
        let est = spot_drift(&times, &incs, t, h, &k()).unwrap();
        let oracle: f64 = times
            .iter()
            .filter(|&&s| t - s < 10.0 * h)
            .map(|&s| (-(t - s) / h).exp() * c / h)
            .sum();
        assert_relative_eq!(est, oracle, max_relative = 1e-12);
        assert!((est / c - 1.0).abs() < 0.02, "ratio {}", est / c);
    }

    #[test]
    fn lrv_without_lags_is_squared_kernel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let times = grid(3000);
        let y: Vec<f64> = (0..3000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (t, h) = (2900.0, 150.0);
        let lrv = spot_lrv(&times, &y, t, h, &k(), 0, &ParzenWindow).unwrap();
        let oracle: f64 = times
            .iter()
            .zip(&y)
            .filter(|(&s, _)| s <= t && t - s < 10.0 * h)
            .map(|(&s, &v)| {
                let kw = (-(t - s) / h).exp();
                kw * kw * v * v
            })
            .sum::<f64>()
            / h;
        assert_relative_eq!(lrv, oracle, max_relative = 1e-12);
        // the raw variance estimator uses K instead of K² on the same terms
        let raw = spot_variance_raw(&times, &y, t, h, &k()).unwrap();
        let raw_oracle: f64 = times
            .iter()
            .zip(&y)
            .filter(|(&s, _)| s <= t && t - s < 10.0 * h)
            .map(|(&s, &v)| (-(t - s) / h).exp() * v * v)
            .sum::<f64>()
            / h;
        assert_relative_eq!(raw * raw, raw_oracle, max_relative = 1e-12);
    }

    #[test]
    fn lrv_iid_level() {
        // i.i.d. variance v, unit spacing: E[lrv] ≈ v K_2 (h' observations per bandwidth / h')
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: f64 = 4.0;
        let d = Normal::new(0.0, v.sqrt()).unwrap();
        let times = grid(40_000);
        let y: Vec<f64> = (0..40_000).map(|_| d.sample(&mut rng)).collect();
        let h = 2000.0;
        let mut acc = 0.0;
        let pts = [25_000.0, 30_000.0, 35_000.0, 40_000.0];
        for &t in &pts {
            acc += spot_lrv(&times, &y, t, h, &k(), 10, &ParzenWindow).unwrap();
        }
        let mean = acc / pts.len() as f64;
        assert!((mean / (v * 0.5) - 1.0).abs() < 0.15, "mean {mean}");
    }

    #[test]
    fn raw_variance_recovers_constant_vol() {
        let n = 23_400;
        let sigma = 1.0 / (n as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Normal::new(0.0, sigma).unwrap();
        let times = grid(n);
        let y: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let est = spot_variance_raw(&times, &y, n as f64, 1500.0, &k()).unwrap();
        assert!((est * est / (sigma * sigma) - 1.0).abs() < 0.15);
    }

    #[test]
    fn auto_lag_examples() {
        assert!(auto_lag(&[0.0f64; 10]).is_err());
        assert_eq!(auto_lag(&[0.0f64; 500]).unwrap(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut qs: Vec<usize> = (0..100)
            .map(|_| {
                let y: Vec<f64> = (0..23_400).map(|_| StandardNormal.sample(&mut rng)).collect();
                auto_lag(&y).unwrap()
            })
            .collect();
        qs.sort_unstable();
        // sampling noise in the pilot autocovariances alone puts Q* in the teens at this n
        assert!((8..=25).contains(&qs[50]), "median {}", qs[50]);
    }

    #[test]
    fn auto_lag_grows_with_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e: Vec<f64> = (0..20_010).map(|_| StandardNormal.sample(&mut rng)).collect();
        // MA(10) with positive weights
        let ma: Vec<f64> = (10..20_010).map(|i| e[i - 10..=i].iter().sum::<f64>()).collect();
        let iid: Vec<f64> = e[..20_000].to_vec();
        assert!(auto_lag(&ma).unwrap() > auto_lag(&iid).unwrap() + 5);
    }

    #[test]
    fn lag_policy_resolution() {
        let y = vec![0.0f64; 100];
        assert_eq!(LagPolicy::Fixed(14).resolve(&y, &NeweyWestConstants::default()).unwrap(), 14);
        assert_eq!(LagPolicy::auto_for(3).resolve(&y, &NeweyWestConstants::default()).unwrap(), 4);
    }

    #[test]
    fn truncation_radius_barely_matters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let times = grid(20_000);
        let y: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let k10 = k();
        let k20 = k().with_truncation(20.0);
        let t = 19_990.0;
        let a = spot_lrv(&times, &y, t, 500.0, &k10, 8, &ParzenWindow).unwrap();
        let b = spot_lrv(&times, &y, t, 500.0, &k20, 8, &ParzenWindow).unwrap();
        assert!(((a - b) / b).abs() < 1e-4);
        let a = spot_drift(&times, &y, t, 100.0, &k10).unwrap();
        let b = spot_drift(&times, &y, t, 100.0, &k20).unwrap();
        let scale = spot_variance_raw(&times, &y, t, 100.0, &k20).unwrap();
        assert!((a - b).abs() / scale < 1e-4);
    }

    proptest! {
        #[test]
        fn lrv_is_nonnegative(
            y in proptest::collection::vec(-10.0f64..10.0, 5..200),
            lags in 0usize..40,
            h in 1.0f64..100.0,
        ) {
            let times: Vec<f64> = (0..y.len()).map(|i| i as f64 * 0.7).collect();
            let t = *times.last().unwrap();
            let v = spot_lrv(&times, &y, t, h, &k(), lags, &ParzenWindow).unwrap();
            prop_assert!(v >= -1e-12);
        }

        #[test]
        fn scale_equivariance_and_shift_invariance(
            y in proptest::collection::vec(-1.0f64..1.0, 10..100),
            c in 0.01f64..100.0,
        ) {
            let times: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
            let t = *times.last().unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let d1 = spot_drift(&times, &y, t, 5.0, &k()).unwrap();
            let d2 = spot_drift(&times, &ys, t, 5.0, &k()).unwrap();
            prop_assert!((d2 - c * d1).abs() <= 1e-9 * (1.0 + (c * d1).abs()));
            let v1 = spot_lrv(&times, &y, t, 20.0, &k(), 3, &ParzenWindow).unwrap();
            let v2 = spot_lrv(&times, &ys, t, 20.0, &k(), 3, &ParzenWindow).unwrap();
            prop_assert!((v2 - c * c * v1).abs() <= 1e-9 * (1.0 + (c * c * v1).abs()));
            // increments are level differences, so shifting every level leaves them unchanged
            let levels: Vec<f64> = std::iter::once(0.0).chain(y.iter().scan(0.0, |s, v| { *s += v; Some(*s) })).collect();
            let shifted: Vec<f64> = levels.iter().map(|l| l + 123.456).collect();
            let inc_a: Vec<f64> = levels.windows(2).map(|w| w[1] - w[0]).collect();
            let inc_b: Vec<f64> = shifted.windows(2).map(|w| w[1] - w[0]).collect();
            let da = spot_drift(&times, &inc_a, t, 5.0, &k()).unwrap();
            let db = spot_drift(&times, &inc_b, t, 5.0, &k()).unwrap();
            prop_assert!((da - db).abs() < 1e-9);
        }
    }
}
