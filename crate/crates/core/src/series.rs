//! Irregularly spaced log-price observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Strictly increasing observation times (seconds relative to `origin_ms`)
/// with log-prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TickSeries<T> {
    pub origin_ms: i64,
    times: Vec<T>,
    log_prices: Vec<T>,
}

impl<T: Scalar> TickSeries<T> {
    pub fn new(origin_ms: i64, times: Vec<T>, log_prices: Vec<T>) -> Result<Self> {
        if times.len() != log_prices.len() {
            return Err(Error::Input(format!(
                "times and log-prices differ in length ({} vs {})",
                times.len(),
                log_prices.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::Input(format!("non-finite time at index {i}")));
        }
        if let Some(i) = log_prices.iter().position(|p| !p.is_finite()) {
            return Err(Error::Input(format!("non-finite log-price at index {i}")));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Input(format!(
                "times must be strictly increasing (index {} -> {})",
                i,
                i + 1
            )));
        }
        Ok(Self { origin_ms, times, log_prices })
    }

    /// Observations at `0, dt, 2 dt, ...` starting from `origin_ms`.
    pub fn regular(origin_ms: i64, dt: T, log_prices: Vec<T>) -> Result<Self> {
        let times = (0..log_prices.len()).map(|i| T::of(i as f64) * dt).collect();
        Self::new(origin_ms, times, log_prices)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn log_prices(&self) -> &[T] {
        &self.log_prices
    }

    pub fn increments(&self) -> Vec<T> {
        self.log_prices.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Last observed log-price at or before `t`.
    pub fn value_at(&self, t: T) -> Option<T> {
        let idx = self.times.partition_point(|&s| s <= t);
        idx.checked_sub(1).map(|i| self.log_prices[i])
    }

    /// True when an observation falls in `(t - lookback, t]`.
    pub fn updated_within(&self, t: T, lookback: T) -> bool {
        let hi = self.times.partition_point(|&s| s <= t);
        hi > 0 && self.times[hi - 1] > t - lookback
    }

    /// Sub-series with times in `[from, to]`.
    pub fn slice_time(&self, from: T, to: T) -> Self {
        let lo = self.times.partition_point(|&s| s < from);
        let hi = self.times.partition_point(|&s| s <= to);
        let hi = hi.max(lo);
        Self {
            origin_ms: self.origin_ms,
            times: self.times[lo..hi].to_vec(),
            log_prices: self.log_prices[lo..hi].to_vec(),
        }
    }

    /// Multiplies every log-price by `c`.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            origin_ms: self.origin_ms,
            times: self.times.clone(),
            log_prices: self.log_prices.iter().map(|&p| p * c).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(TickSeries::new(0, vec![0.0, 1.0], vec![0.0]).is_err());
        assert!(TickSeries::new(0, vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
        assert!(TickSeries::new(0, vec![0.0, f64::NAN], vec![0.0, 1.0]).is_err());
        assert!(TickSeries::<f64>::new(0, vec![], vec![]).unwrap().is_empty());
    }

    #[test]
    fn lookups() {
        let s = TickSeries::new(0, vec![0.0, 1.0, 5.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.value_at(-1.0), None);
        assert_eq!(s.value_at(0.0), Some(1.0));
        assert_eq!(s.value_at(4.9), Some(2.0));
        assert_eq!(s.value_at(100.0), Some(3.0));
        assert!(s.updated_within(1.0, 0.5));
        assert!(!s.updated_within(4.0, 2.0));
        assert!(s.updated_within(5.0, 0.1));
        assert_eq!(s.slice_time(0.5, 5.0).len(), 2);
        assert_eq!(s.increments(), vec![1.0, 1.0]);
    }
}
