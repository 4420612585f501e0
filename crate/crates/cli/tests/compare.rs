use mavtrack_cli::run_compare;
use mavtrack_core::scenario::ScenarioConfig;
use mavtrack_core::RateMode;

#[test]
fn adaptive_has_the_longest_track_on_circle_ramp() {
    let dir = tempfile::tempdir().unwrap();
    let modes: Vec<RateMode> = ["fixed:5", "fixed:10", "fixed:20", "fixed:100", "adaptive"]
        .iter()
        .map(|m| m.parse().unwrap())
        .collect();
    let cfg = ScenarioConfig::preset("circle_ramp").unwrap();
    let rows = run_compare(cfg, None, Some(dir.path()), &modes, None).unwrap();
    assert_eq!(rows.len(), 5);
    let adaptive = rows.iter().find(|m| m.mode == "adaptive").unwrap();
    for m in &rows {
        assert!(adaptive.track_duration >= m.track_duration, "{} outlasted adaptive", m.mode);
    }
    assert!(rows.iter().find(|m| m.mode == "fixed:5").unwrap().lost);
    for m in &modes {
        assert!(dir.path().join(mavtrack_cli::mode_dir(m)).join("track.csv").exists());
    }
}
