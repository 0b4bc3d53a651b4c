use evospace::experiments::*;
use evospace::frontier::{efficient_frontier, frontier_sweep, FrontierProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn short(kind: ScenarioKind, seeds: u64, steps: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::defaults(kind);
    c.seeds = (0..seeds).collect();
    c.max_steps = Some(steps);
    c
}

fn traces(arm: &ArmReport) -> Vec<String> {
    arm.seeds
        .iter()
        .map(|s| serde_json::to_string(&s.trace).unwrap())
        .collect()
}

#[test]
fn zero_drift_matches_plain_run() {
    let mut drift = short(ScenarioKind::Drift, 2, 300);
    drift.drift_multipliers = vec![0.0];
    let drift = run_scenario(&drift).unwrap();
    let plain = run_scenario(&short(ScenarioKind::UnsupervisedMean, 2, 300)).unwrap();
    assert_eq!(traces(drift.arm("drift_x0").unwrap()), traces(plain.arm("main").unwrap()));
}

#[test]
fn reruns_are_identical() {
    let c = short(ScenarioKind::Agnostic, 3, 200);
    let a = run_scenario(&c).unwrap();
    let b = run_scenario(&c).unwrap();
    assert_eq!(traces(&a.arms[0]), traces(&b.arms[0]));
}

#[test]
fn seeds_change_the_run() {
    let r = run_scenario(&short(ScenarioKind::UnsupervisedMean, 2, 100)).unwrap();
    let t = traces(&r.arms[0]);
    assert_ne!(t[0], t[1]);
}

#[test]
fn stability_runs_both_knob_sets() {
    let r = run_scenario(&short(ScenarioKind::Stability, 1, 50)).unwrap();
    assert!(r.arm("stable").is_some());
    assert!(r.arm("standard").is_some());
    let stable = &r.arm("stable").unwrap().seeds[0].schedule;
    let standard = &r.arm("standard").unwrap().seeds[0].schedule;
    assert!(stable.alpha < standard.alpha);
}

#[test]
fn supervised_renews_data_pairs() {
    let mut c = short(ScenarioKind::SupervisedLinear, 1, 40);
    c.renewal_period = Some(10);
    let r = run_scenario(&c).unwrap();
    let s = &r.arms[0].seeds[0];
    assert_eq!(s.steps_run, 40);
    assert!(!s.failed);
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&short(ScenarioKind::UnsupervisedMean, 2, 20)).unwrap();
    write_report(&r, dir.path()).unwrap();
    for name in ["report.json", "trace_main_0.jsonl", "perf_main_1.csv", "path_main_0.csv"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let json: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["arms"][0]["label"], "main");
    let lines = std::fs::read_to_string(dir.path().join("trace_main_0.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 20);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = short(ScenarioKind::UnsupervisedMean, 1, 10);
    c.seeds.clear();
    assert!(run_scenario(&c).is_err());
    let mut c = short(ScenarioKind::UnsupervisedMean, 1, 10);
    c.epsilon = -1.0;
    assert!(run_scenario(&c).is_err());
}

fn spd(entries: &[f64], dg: usize) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(dg, dg, entries);
    &a * a.transpose() + DMatrix::identity(dg, dg) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frontier_widens_with_premium(
        entries in proptest::collection::vec(-1.0f64..1.0, 9),
        delta in proptest::collection::vec(-2.0f64..2.0, 3),
        n in 0.1f64..2.0,
        alpha in 0.05f64..1.0,
    ) {
        let p = FrontierProblem::new(DVector::from_vec(delta), spd(&entries, 3), n, alpha).unwrap();
        let rows = frontier_sweep(&p, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        for w in rows.windows(2) {
            let (_, lo0, hi0) = w[0];
            let (_, lo1, hi1) = w[1];
            prop_assert!(hi1 >= hi0 - 1e-12 && lo1 <= lo0 + 1e-12);
        }
        let (plus, minus) = efficient_frontier(&p, p.min_premium().unwrap()).unwrap();
        prop_assert!((plus - minus).abs() <= 1e-9 * plus.abs().max(1.0));
    }
}
