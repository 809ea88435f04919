use std::path::{Path, PathBuf};

use levy_ou::harness::{run_experiment, ExperimentConfig, Scenario};
use levy_ou::Error;
use proptest::prelude::*;

fn config(name: &str, scenario: Scenario, out: &Path) -> ExperimentConfig {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let mut c = ExperimentConfig::load(&path).unwrap();
    c.scenario = scenario;
    c.output_dir = out.to_path_buf();
    c
}

#[test]
fn gaussian_validate_meets_ks_bound() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_experiment(&config("gaussian-1d.json", Scenario::Validate, dir.path())).unwrap();
    assert!(rep.all_pass(), "{}", rep.to_text());
    assert!(rep.ks_distances[0] <= 0.01);
    assert!(rep.criteria.iter().all(|c| c.threshold.is_finite()));
}

#[test]
fn stable_ou_fleet_meets_ks_bound() {
    let dir = tempfile::tempdir().unwrap();
    let base = config("stable-ou-1d.json", Scenario::Validate, dir.path());
    for (lambda, seed) in [(1.0, 3), (0.5, 4)] {
        let mut c = base.clone();
        c.system.a = vec![vec![-lambda]];
        c.sim.seed = seed;
        let rep = run_experiment(&c).unwrap();
        assert!(rep.ks_distances[0] <= 0.015, "lambda {lambda}: {}", rep.to_text());
        assert!((0.0..=1.0).contains(&rep.ks_distances[0]));
    }
}

#[test]
fn exit_code_follows_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("gaussian-1d.json", Scenario::Validate, dir.path());
    c.sim.sample_count = 20_000;
    c.validate.ks_threshold = None;
    c.triplet.drift = Some(vec![1.0]);
    let good = run_experiment(&c).unwrap();
    assert!(good.all_pass(), "{}", good.to_text());
    assert_eq!(good.exit_code(), 0);

    c.validate.ks_threshold = Some(1e-6);
    let bad = run_experiment(&c).unwrap();
    assert_eq!(bad.exit_code(), 1);
    assert!(bad.to_text().contains("[FAIL] ks_marginal_1"));
    assert!(bad.to_text().ends_with("overall: FAIL\n"));
}

#[test]
fn density_refuses_rank_deficient_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("rank-deficient.json", Scenario::Density, dir.path());
    match run_experiment(&c) {
        Err(Error::Precondition(msg)) => assert!(msg.contains("rank condition"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rank_check_reports_rank() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_experiment(&config("kolmogorov.json", Scenario::RankCheck, dir.path())).unwrap();
    assert!(rep.notes.contains(&"rank: 2/2, satisfied".to_string()));
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(text, rep.to_text());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip_is_idempotent(
        seed in any::<u64>(),
        samples in 1usize..1_000_000,
        t in 0.01..10.0f64,
        alpha in 0.1..1.99f64,
        points in prop::sample::select(vec![16usize, 32, 64, 256]),
        with_q in any::<bool>(),
    ) {
        let q = if with_q { r#""q": [[0.5]],"# } else { "" };
        let text = format!(
            r#"{{"scenario": "simulate",
                "system": {{"a": [[0, 0], [1, 0]], "b": [[1], [0]]}},
                "triplet": {{{q} "measure": {{"family": "sum", "parts": [
                    {{"family": "isotropic_stable", "alpha": {alpha}, "scale": 1.0}},
                    {{"family": "uniform_box", "lo": [0.5], "hi": [1.0], "intensity": 2.0}}]}}}},
                "t": {t},
                "grid": {{"points_per_axis": {points}}},
                "sim": {{"seed": {seed}, "sample_count": {samples}}}}}"#
        );
        let first = ExperimentConfig::parse(&text).unwrap();
        let json = first.to_json();
        let second = ExperimentConfig::parse(&json).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(json, second.to_json());
        prop_assert_eq!(first.digest(), second.digest());
    }
}
