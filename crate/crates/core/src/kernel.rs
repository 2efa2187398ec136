//! Kernels for the local drift and variance estimators, their integral
//! constants, and the Parzen lag window used by the HAC estimator.
//!
//! Kernels are left-sided: `K(x) = 0` for `x > 0`, so an estimate at time
//! `t` only looks at observations up to `t`. A kernel is truncated at
//! `truncation_radius` bandwidths, which bounds the cost of every rolling
//! sum. The integral constants (`K_2`, `m_K`, `m'_K`) always refer to the
//! untruncated kernel.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quad;
use crate::scalar::Scalar;

/// Default truncation radius in bandwidth units (tail weight `e^{-10}`).
pub const DEFAULT_TRUNCATION_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `K(x) = exp(-|x|)` for `x <= 0`.
    LeftExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub truncation_radius: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::left_exponential()
    }
}

impl KernelSpec {
    pub fn left_exponential() -> Self {
        Self {
            family: KernelFamily::LeftExponential,
            truncation_radius: DEFAULT_TRUNCATION_RADIUS,
        }
    }

    pub fn with_truncation(mut self, radius: f64) -> Self {
        self.truncation_radius = radius;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_radius.is_finite() && self.truncation_radius > 0.0) {
            return Err(Error::Config(format!(
                "kernel truncation radius must be positive and finite, got {}",
                self.truncation_radius
            )));
        }
        Ok(())
    }

    /// Untruncated kernel shape, no input checks.
    #[inline]
    pub fn shape<T: Scalar>(&self, x: T) -> T {
        match self.family {
            KernelFamily::LeftExponential => {
                if x > T::zero() {
                    T::zero()
                } else {
                    x.exp()
                }
            }
        }
    }

    /// Truncated kernel, no input checks. Support is `(-radius, 0]`.
    #[inline]
    pub fn weight<T: Scalar>(&self, x: T) -> T {
        if x <= -T::of(self.truncation_radius) {
            T::zero()
        } else {
            self.shape(x)
        }
    }

    /// `K(0)`.
    pub fn at_zero(&self) -> f64 {
        self.shape(0.0_f64)
    }

    /// True when `s` lies in the truncated window of bandwidth `h` ending at `t`.
    #[inline]
    pub fn in_window<T: Scalar>(&self, s: T, t: T, h: T) -> bool {
        s <= t && s > t - T::of(self.truncation_radius) * h
    }
}

/// Evaluates the (truncated) kernel at `x`.
pub fn eval_kernel<T: Scalar>(spec: &KernelSpec, x: T) -> Result<T> {
    if !x.is_finite() {
        return Err(Error::Input(format!("kernel argument must be finite, got {x}")));
    }
    Ok(spec.weight(x))
}

/// `K_2 = ∫ K(x)^2 dx`.
pub fn kernel_k2(spec: &KernelSpec) -> f64 {
    match spec.family {
        KernelFamily::LeftExponential => 0.5,
    }
}

/// `K_2` by quadrature over the untruncated support.
pub fn kernel_k2_quad(spec: &KernelSpec) -> f64 {
    kernel_moment_quad(spec, 0.0, true).expect("power 0 is valid")
}

/// `m_K(p) = ∫ K(x)|x|^p dx` (`squared = false`) or
/// `m'_K(p) = ∫ K(x)^2 |x|^p dx` (`squared = true`), for `p > -1`.
///
/// Closed Gamma-function forms for the left exponential kernel.
pub fn kernel_moment(spec: &KernelSpec, power: f64, squared: bool) -> Result<f64> {
    check_power(power)?;
    match spec.family {
        KernelFamily::LeftExponential => {
            let m = gamma(1.0 + power);
            Ok(if squared { m * 2f64.powf(-(1.0 + power)) } else { m })
        }
    }
}

/// Same integral as [`kernel_moment`], always by adaptive quadrature.
///
/// The substitution `|x| = v^{1/(1+p)}` removes the `|x|^p` singularity at
/// the origin, leaving `(1+p)^{-1} ∫_0^∞ K(-v^{1/(1+p)})^q dv`.
pub fn kernel_moment_quad(spec: &KernelSpec, power: f64, squared: bool) -> Result<f64> {
    check_power(power)?;
    let inv = 1.0 / (1.0 + power);
    let value = quad::integrate_half_line(
        |v| {
            let k = spec.shape(-v.powf(inv));
            if squared {
                k * k
            } else {
                k
            }
        },
        1e-13,
    );
    Ok(value * inv)
}

fn check_power(power: f64) -> Result<()> {
    if !(power > -1.0) || !power.is_finite() {
        return Err(Error::Domain(format!("kernel moment power must exceed -1, got {power}")));
    }
    Ok(())
}

/// Variance inflation of the t-statistic under a pure volatility burst,
/// `c_{K,β} = sqrt(m'_K(-2β) / (K_2 m_K(-2β)))`.
pub fn c_k_beta(spec: &KernelSpec, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let num = kernel_moment(spec, -2.0 * beta, true)?;
    let den = kernel_k2(spec) * kernel_moment(spec, -2.0 * beta, false)?;
    Ok((num / den).sqrt())
}

/// [`c_k_beta`] with every constant computed by quadrature.
pub fn c_k_beta_quad(spec: &KernelSpec, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let num = kernel_moment_quad(spec, -2.0 * beta, true)?;
    let den = kernel_k2_quad(spec) * kernel_moment_quad(spec, -2.0 * beta, false)?;
    Ok((num / den).sqrt())
}

/// Location shift of the t-statistic on the border `α - β = 1/2`,
/// `d = (c1/c2) m'_K(-β-1/2) / sqrt(K_2 m_K(-2β))`.
pub fn d_k_beta(spec: &KernelSpec, beta: f64, c1_over_c2: f64) -> Result<f64> {
    check_beta(beta)?;
    let num = kernel_moment(spec, -beta - 0.5, true)?;
    let den = (kernel_k2(spec) * kernel_moment(spec, -2.0 * beta, false)?).sqrt();
    Ok(c1_over_c2 * num / den)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::Domain(format!("beta must lie in [0, 1/2), got {beta}")));
    }
    Ok(())
}

/// Limit of `|T|` at a pre-announced jump, `sqrt(K(0) / K_2)`.
pub fn jump_limit(spec: &KernelSpec) -> f64 {
    (spec.at_zero() / kernel_k2(spec)).sqrt()
}

/// Parzen lag window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParzenWindow;

impl ParzenWindow {
    #[inline]
    pub fn weight<T: Scalar>(&self, x: T) -> T {
        parzen(x)
    }
}

/// `1 - 6x² + 6|x|³` on `|x| ≤ 1/2`, `2(1 - |x|)³` on `1/2 < |x| ≤ 1`, else 0.
#[inline]
pub fn parzen<T: Scalar>(x: T) -> T {
    let a = x.abs();
    let one = T::one();
    let six = T::of(6.0);
    if a <= T::of(0.5) {
        one - six * a * a + six * a * a * a
    } else if a <= one {
        let r = one - a;
        T::of(2.0) * r * r * r
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        let k = KernelSpec::left_exponential();
        assert_eq!(eval_kernel(&k, 0.0).unwrap(), 1.0);
        assert_eq!(eval_kernel(&k, 0.5).unwrap(), 0.0);
        assert_relative_eq!(eval_kernel(&k, -1.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(eval_kernel(&k, -10.5).unwrap(), 0.0);
        assert!(eval_kernel(&k, f64::NAN).is_err());
        assert!(eval_kernel(&k, f64::NEG_INFINITY).is_err());
        assert_eq!(eval_kernel(&k, -1.0f32).unwrap(), (-1.0f32).exp());
    }

    #[test]
    fn k2_and_jump_limit() {
        let k = KernelSpec::left_exponential();
        assert_eq!(kernel_k2(&k), 0.5);
        assert_relative_eq!(kernel_k2_quad(&k), 0.5, max_relative = 1e-10);
        assert_relative_eq!(jump_limit(&k), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn kernel_integrates_to_one() {
        let k = KernelSpec::left_exponential();
        assert_relative_eq!(kernel_moment(&k, 0.0, false).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(kernel_moment_quad(&k, 0.0, false).unwrap(), 1.0, epsilon = 1e-8);
        // truncated mass differs from one by e^{-10}
        let trunc = quad::integrate(|u| k.weight(-u), 0.0, 10.0, 1e-12);
        assert!((trunc - 1.0).abs() < 5e-5);
    }

    #[test]
    fn moment_domain() {
        let k = KernelSpec::left_exponential();
        assert!(kernel_moment(&k, -1.0, false).is_err());
        assert!(kernel_moment_quad(&k, -1.5, true).is_err());
    }

    #[test]
    fn moments_match_gamma_forms() {
        let k = KernelSpec::left_exponential();
        for &p in &[-0.9, -0.8, -0.5, -0.2, 0.0, 0.3, 1.0, 2.5] {
            let a = kernel_moment(&k, p, false).unwrap();
            let q = kernel_moment_quad(&k, p, false).unwrap();
            assert_relative_eq!(a, q, max_relative = 1e-9);
            let a2 = kernel_moment(&k, p, true).unwrap();
            let q2 = kernel_moment_quad(&k, p, true).unwrap();
            assert_relative_eq!(a2, q2, max_relative = 1e-9);
        }
    }

    #[test]
    fn c_k_beta_examples() {
        let k = KernelSpec::left_exponential();
        assert_relative_eq!(c_k_beta(&k, 0.3).unwrap(), 2f64.powf(0.3), epsilon = 1e-12);
        assert_relative_eq!(c_k_beta(&k, 0.3).unwrap(), 1.231_144_413, epsilon = 1e-8);
        assert_relative_eq!(c_k_beta(&k, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(c_k_beta_quad(&k, 0.0).unwrap(), 1.0, epsilon = 1e-8);
        assert!(c_k_beta(&k, 0.5).is_err());
    }

    #[test]
    fn d_k_beta_blows_up_near_half() {
        let k = KernelSpec::left_exponential();
        let a = d_k_beta(&k, 0.1, 1.0).unwrap();
        let b = d_k_beta(&k, 0.49, 1.0).unwrap();
        assert!(b > 5.0 * a);
    }

    #[test]
    fn parzen_examples() {
        assert_eq!(parzen(0.0), 1.0);
        assert_relative_eq!(parzen(0.5), 0.25, epsilon = 1e-15);
        assert_eq!(parzen(1.2), 0.0);
        assert_eq!(parzen(1.0), 0.0);
        assert_relative_eq!(parzen(-0.5f64), 0.25, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn c_k_beta_quadrature_is_two_to_beta(beta in 0.0f64..0.45) {
            let k = KernelSpec::left_exponential();
            let c = c_k_beta_quad(&k, beta).unwrap();
            prop_assert!((c - 2f64.powf(beta)).abs() < 1e-6);
        }

        #[test]
        fn kernel_monotone_on_left(a in -20.0f64..0.0, b in -20.0f64..0.0) {
            let k = KernelSpec::left_exponential();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(k.weight(lo) <= k.weight(hi));
            prop_assert!(k.weight(lo) >= 0.0 && k.weight(hi) <= 1.0);
        }

        #[test]
        fn parzen_continuous_nonnegative(x in -2.0f64..2.0) {
            let w = parzen(x);
            prop_assert!((0.0..=1.0).contains(&w));
            let eps = 1e-7;
            prop_assert!((parzen(x + eps) - w).abs() < 1e-5);
        }
    }
}
