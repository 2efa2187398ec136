//! Exponentially decaying window sums evaluated along an increasing grid.
//!
//! For a lag `L`, item `i` pairs observations `i` and `i + L` and
//! contributes `y_i y_{i+L} exp(-rate (t - (s_i + s_{i+L}) / 2))` (or
//! `y_i exp(-rate (t - s_i))` in linear mode) while `s_{i+L} <= t` and
//! `s_i > t - span`. Times are sorted, so the active items always form an
//! index range and each one is added and removed exactly once.

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct DecayingSum<'a, T> {
    times: &'a [T],
    values: &'a [T],
    lag: usize,
    linear: bool,
    rate: T,
    span: T,
    lo: usize,
    hi: usize,
    sum: T,
    now: Option<T>,
}

impl<'a, T: Scalar> DecayingSum<'a, T> {
    /// `Σ y_i exp(-rate (t - s_i))`.
    pub(crate) fn linear(times: &'a [T], values: &'a [T], rate: T, span: T) -> Self {
        Self::build(times, values, 0, true, rate, span)
    }

    /// `Σ y_i y_{i+lag} exp(-rate (t - (s_i + s_{i+lag}) / 2))`.
    pub(crate) fn lagged(times: &'a [T], values: &'a [T], lag: usize, rate: T, span: T) -> Self {
        Self::build(times, values, lag, false, rate, span)
    }

    fn build(times: &'a [T], values: &'a [T], lag: usize, linear: bool, rate: T, span: T) -> Self {
        debug_assert_eq!(times.len(), values.len());
        debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        Self { times, values, lag, linear, rate, span, lo: 0, hi: 0, sum: T::zero(), now: None }
    }

    fn items(&self) -> usize {
        self.times.len().saturating_sub(self.lag)
    }

    #[inline]
    fn term(&self, i: usize, t: T) -> T {
        if self.linear {
            self.values[i] * (-self.rate * (t - self.times[i])).exp()
        } else {
            let j = i + self.lag;
            let anchor = (self.times[i] + self.times[j]) * T::of(0.5);
            self.values[i] * self.values[j] * (-self.rate * (t - anchor)).exp()
        }
    }

    /// Moves the evaluation time forward to `t`.
    pub(crate) fn advance(&mut self, t: T) {
        if let Some(prev) = self.now {
            debug_assert!(t >= prev);
            self.sum = self.sum * (-self.rate * (t - prev)).exp();
        }
        self.now = Some(t);
        let n = self.items();
        let cutoff = t - self.span;
        let mut new_hi = self.hi;
        while new_hi < n && self.times[new_hi + self.lag] <= t {
            new_hi += 1;
        }
        let mut new_lo = self.lo;
        while new_lo < n && self.times[new_lo] <= cutoff {
            new_lo += 1;
        }
        let (old_lo, old_hi) = (self.lo, self.hi);
        self.lo = new_lo;
        self.hi = new_hi;
        if new_lo >= new_hi {
            self.sum = T::zero();
            return;
        }
        for i in old_lo..new_lo.min(old_hi) {
            self.sum = self.sum - self.term(i, t);
        }
        for i in old_hi.max(new_lo)..new_hi {
            self.sum = self.sum + self.term(i, t);
        }
    }

    pub(crate) fn value(&self) -> T {
        self.sum
    }

    /// Number of active items.
    pub(crate) fn count(&self) -> usize {
        self.hi.saturating_sub(self.lo)
    }
}
