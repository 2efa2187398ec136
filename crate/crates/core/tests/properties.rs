use driftburst::analysis::{cgw_regression, reversal_fraction, reversion_regression, EventReturns};
use driftburst::critval::{CriticalValueTable, TableAxes};
use driftburst::detector::{extract_events, DetectorConfig, TStatSeries};
use driftburst::ingest::{read_ticks, write_ticks, TickRecord};
use driftburst::parametric::{fit_mle, simulate_window, Theta};
use proptest::prelude::*;

fn tstats(values: Vec<Option<f64>>, spacing: f64) -> TStatSeries<f64> {
    let n = values.len();
    TStatSeries {
        grid_times: (0..n).map(|i| i as f64 * spacing).collect(),
        t_values: values,
        mu_hats: vec![None; n],
        lrv_hats: vec![None; n],
        grid_spacing: spacing,
        lags_used: 0,
        config: DetectorConfig::default(),
    }
}

fn sample(i: usize, r_minus: f64, r_plus: f64, v: f64) -> EventReturns {
    EventReturns { peak_time: i as f64 * 600.0, sign: if r_minus < 0.0 { -1 } else { 1 }, r_minus, r_plus, v_minus: Some(v), horizon: 300.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn events_clear_threshold_and_are_separated(
        values in prop::collection::vec(prop::option::weighted(0.95, -8.0f64..8.0), 10..400),
        threshold in 1.0f64..5.0,
    ) {
        let ts = tstats(values, 5.0);
        let events = extract_events(&ts, threshold, 300.0).unwrap();
        for e in &events {
            prop_assert!(e.peak_t.abs() >= e.threshold_used);
            prop_assert_eq!(e.sign, if e.peak_t >= 0.0 { 1 } else { -1 });
        }
        for w in events.windows(2) {
            prop_assert!(w[1].peak_time - w[0].peak_time >= 300.0);
        }
    }

    #[test]
    fn regressions_ignore_sample_order(
        rows in prop::collection::vec((-0.02f64..0.02, -0.02f64..0.02, 0.1f64..3.0), 25..80),
        rotation in 0usize..80,
    ) {
        let s: Vec<EventReturns> = rows.iter().enumerate().map(|(i, &(a, b, v))| sample(i, a, b, v)).collect();
        let mut shuffled = s.clone();
        shuffled.rotate_left(rotation % s.len());
        shuffled.reverse();
        if let Ok(r) = reversion_regression(&s) {
            prop_assert!((0.0..=1.0).contains(&r.r_squared));
            prop_assert_eq!(r, reversion_regression(&shuffled).unwrap());
        }
        if let Ok(r) = cgw_regression(&s) {
            prop_assert_eq!(r, cgw_regression(&shuffled).unwrap());
        }
        let f = reversal_fraction(&s);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn tick_csv_round_trip_is_exact(
        rows in prop::collection::vec(
            (0i64..1_000_000, 1.0f64..500.0, 0.0f64..0.5, prop::option::of(0.1f64..1e4), any::<bool>()),
            0..60,
        ),
    ) {
        let mut records: Vec<TickRecord> = rows
            .iter()
            .map(|&(ts, bid, spread, sz, trade)| TickRecord {
                ts_ms: ts,
                bid: Some(bid),
                ask: Some(bid + spread),
                trade_px: trade.then_some(bid + 0.5 * spread),
                trade_sz: if trade { sz } else { None },
            })
            .collect();
        let mut buf = Vec::new();
        write_ticks(&records, &mut buf).unwrap();
        let loaded = read_ticks(buf.as_slice()).unwrap();
        records.sort_by_key(|r| r.ts_ms);
        prop_assert_eq!(loaded.malformed, 0);
        prop_assert_eq!(loaded.records, records);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn generated_tables_are_monotone(seed in any::<u64>()) {
        let axes = TableAxes { m: vec![50, 400], rho: vec![0.0, 0.5, 0.9], level: vec![0.90, 0.95, 0.99] };
        let table = CriticalValueTable::build(axes, 2000, 0, seed).unwrap();
        prop_assert!(table.monotonicity_violations().is_empty());
    }

    #[test]
    fn likelihood_ratios_are_nonnegative(
        seed in any::<u64>(),
        alpha in 0.0f64..0.8,
        beta in 0.0f64..0.4,
        mu in -0.02f64..0.02,
    ) {
        let n = 400;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 / 23_400.0).collect();
        let end = (n as f64 + 1.0) / 23_400.0;
        let theta = Theta { mu, sigma: 0.15 * (0.0225f64 / 252.0).sqrt(), alpha, beta };
        let x = simulate_window(&theta, &times, end, seed).unwrap();
        let f = fit_mle(&times, &x, end).unwrap();
        prop_assert!(f.lr_drift >= 0.0 && f.lr_vol >= 0.0);
        prop_assert!(f.loglik >= f.loglik_no_drift && f.loglik >= f.loglik_no_vol);
        prop_assert!(f.sigma > 0.0 && (0.0..1.0).contains(&f.alpha) && (0.0..0.5).contains(&f.beta));
    }
}
