use driftburst::detector::tstat_grid;
use driftburst::ingest::{build_midquote, load_ticks, save_ticks, SessionWindow};
use driftburst::pipeline::{run_detect, RunConfig};
use driftburst::simulator::{simulate_day, ScenarioSpec};
use driftburst::DetectorConfig;

#[test]
fn simulated_ticks_survive_a_file_round_trip() {
    let spec = ScenarioSpec { origin_ms: 1_700_000_000_000, ..ScenarioSpec::study_burst(0.65, 0.2) };
    let records = simulate_day(&spec, 21).unwrap().to_records(&spec);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("day.csv");
    save_ticks(&records, &path).unwrap();
    let loaded = load_ticks(&path).unwrap();
    assert_eq!(loaded, records);

    let a = build_midquote(&records, spec.origin_ms).unwrap();
    let b = build_midquote(&loaded, spec.origin_ms).unwrap();
    let cfg = DetectorConfig::default();
    assert_eq!(tstat_grid(&a, 5.0, &cfg).unwrap(), tstat_grid(&b, 5.0, &cfg).unwrap());
}

#[test]
fn multi_day_files_split_by_session() {
    let day_ms = 86_400_000;
    let session = SessionWindow { start_sec: 9 * 3600 + 1800, end_sec: 16 * 3600, utc_offset_minutes: 0 };
    let mut records = Vec::new();
    for d in 0..3 {
        let spec = ScenarioSpec { origin_ms: 19_000 * day_ms + d * day_ms + session.start_sec as i64 * 1000, ..ScenarioSpec::study_null() };
        records.extend(simulate_day(&spec, 100 + d as u64).unwrap().to_records(&spec));
    }
    let cfg = RunConfig { session: Some(session), ..RunConfig::default() };
    let report = run_detect(&cfg, &records).unwrap();
    assert_eq!(report.days.len(), 3);
    for day in &report.days {
        assert!(day.observations > 20_000);
    }
    assert_eq!(report.to_json().unwrap(), run_detect(&cfg, &records).unwrap().to_json().unwrap());
}
