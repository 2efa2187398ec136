//! Drift burst detection on high-frequency price series.
//!
//! The crate computes a noise-robust local t-statistic for explosive drift
//! on a rolling grid, calibrates the maximum statistic with simulated
//! critical values, extracts burst events and analyses what happens around
//! them. A Monte Carlo simulator and a local parametric likelihood test are
//! included for size and power studies.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common `f64` case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod critval;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod ingest;
pub mod kernel;
pub mod parametric;
pub mod pipeline;
pub mod preavg;
pub mod quad;
mod rolling;
pub mod scalar;
pub mod series;
pub mod simulator;

pub use critval::{critical_value, fit_ar1, simulate_max_quantiles, Ar1Fit, CriticalValueTable};
pub use detector::{
    extract_events, max_stat, tstat_at, tstat_grid, BurstEvent, DetectorConfig, MaxStat, StatMode, TStatSeries,
};
pub use error::{Error, Result};
pub use estimator::{auto_lag, spot_drift, spot_lrv, spot_variance_raw, LagPolicy, SpotEstimates};
pub use kernel::{KernelSpec, ParzenWindow};
pub use preavg::{preaverage, PreAvgConfig};
pub use scalar::Scalar;
pub use series::TickSeries;
pub use ingest::{build_midquote, load_ticks, save_ticks, TickRecord};
pub use simulator::{simulate_day, ScenarioSpec, SimulatedDay};

pub type SpotEstimates64 = SpotEstimates<f64>;
pub type TickSeries64 = TickSeries<f64>;
pub type TStatSeries64 = TStatSeries<f64>;
