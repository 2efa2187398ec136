//! Pre-averaging of noisy increments.
//!
//! With `k` the window and `g(x) = min(x, 1 - x)`, increment `i` of the
//! pre-averaged series is `Σ_{j=1}^{k-1} g(j/k) Δ_{i+j}` for
//! `i = 0..=n-k`, where `Δ_m = level_{m+1} - level_m`. The same value is
//! `-Σ_{j=0}^{k-1} H_j level_{i+1+j}` with `H_j = g((j+1)/k) - g(j/k)`.
//! Pre-averaged increment `i` therefore spans levels `i+1 ..= i+k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFunction {
    /// `g(x) = min(x, 1 - x)`
    #[default]
    MinTriangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreAvgConfig {
    pub k_n: usize,
    #[serde(default)]
    pub weight: WeightFunction,
}

impl Default for PreAvgConfig {
    fn default() -> Self {
        Self::new(3)
    }
}

impl PreAvgConfig {
    pub fn new(k_n: usize) -> Self {
        Self { k_n, weight: WeightFunction::MinTriangle }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_n == 0 {
            return Err(Error::Config("pre-averaging window k_n must be at least 1".into()));
        }
        Ok(())
    }

    /// Weights `g(j/k)` for `j = 1..k-1`.
    pub fn weights<T: Scalar>(&self) -> Vec<T> {
        let k = T::of(self.k_n as f64);
        (1..self.k_n)
            .map(|j| g_unchecked(T::of(j as f64) / k))
            .collect()
    }

    /// Level-form coefficients `H_j` for `j = 0..k-1`.
    pub fn level_weights<T: Scalar>(&self) -> Vec<T> {
        let k = T::of(self.k_n as f64);
        (0..self.k_n)
            .map(|j| {
                g_unchecked(T::of((j + 1) as f64) / k) - g_unchecked(T::of(j as f64) / k)
            })
            .collect()
    }
}

#[inline]
fn g_unchecked<T: Scalar>(x: T) -> T {
    x.min(T::one() - x)
}

/// `g(x) = min(x, 1 - x)` on `[0, 1]`.
pub fn weight_g<T: Scalar>(x: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::Domain(format!("pre-averaging weight argument must lie in [0,1], got {x}")));
    }
    Ok(g_unchecked(x))
}

/// Pre-averages a series of increments. Output length is `n - k + 1`;
/// `k = 1` returns the input unchanged.
pub fn preaverage<T: Scalar>(increments: &[T], cfg: &PreAvgConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    let k = cfg.k_n;
    if k == 1 {
        return Ok(increments.to_vec());
    }
    if increments.len() < k {
        return Err(Error::Input(format!(
            "pre-averaging needs at least k_n = {k} increments, got {}",
            increments.len()
        )));
    }
    let g = cfg.weights::<T>();
    let out = (0..=increments.len() - k)
        .map(|i| {
            g.iter()
                .enumerate()
                .fold(T::zero(), |acc, (j, &w)| acc + w * increments[i + j + 1])
        })
        .collect();
    Ok(out)
}

/// Pre-averaged increments computed from price levels (`n + 1` levels give
/// the same `n - k + 1` values as [`preaverage`] on their differences).
pub fn preaverage_levels<T: Scalar>(levels: &[T], cfg: &PreAvgConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    let k = cfg.k_n;
    if levels.len() < k + 1 {
        return Err(Error::Input(format!(
            "pre-averaging needs at least k_n + 1 = {} levels, got {}",
            k + 1,
            levels.len()
        )));
    }
    if k == 1 {
        return Ok(levels.windows(2).map(|w| w[1] - w[0]).collect());
    }
    let h = cfg.level_weights::<T>();
    let n = levels.len() - 1;
    let out = (0..=n - k)
        .map(|i| {
            -h.iter()
                .enumerate()
                .fold(T::zero(), |acc, (j, &w)| acc + w * levels[i + 1 + j])
        })
        .collect();
    Ok(out)
}
