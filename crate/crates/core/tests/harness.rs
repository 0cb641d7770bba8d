mod common;

use std::fs;

use common::{builtin, builtin_basis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbsde::harness::{emit_report, fit_rate, run_sweep, RateReport, SweepPlan};
use rbsde::penalty::PenaltyLevel;

fn plan(name: &str, steps: usize, n_list: &[u64], paths: usize) -> SweepPlan {
    SweepPlan {
        scenario: builtin(name, Some(steps)),
        basis: builtin_basis(name),
        n_list: n_list
            .iter()
            .map(|&n| PenaltyLevel::new(n).unwrap())
            .collect(),
        paths,
        replications: 3,
        seed_base: 7,
    }
}

#[test]
fn noisy_power_law_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pts: Vec<(f64, f64)> = (2..10)
        .map(|e| {
            let n = f64::from(1u32 << e);
            (n, (1.0 + 0.01 * rng.random_range(-1.0..1.0)) / n)
        })
        .collect();
    let f = fit_rate(&pts).unwrap();
    assert!((-1.05..=-0.95).contains(&f.slope), "{f:?}");
    assert_eq!(f.used.len(), pts.len());
}

#[test]
fn empty_sweep_writes_valid_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_sweep(&plan("binding-1d", 32, &[], 200)).unwrap();
    emit_report(&report, dir.path()).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["levels"], serde_json::json!([]));
    assert_eq!(v["cauchy"], serde_json::json!([]));
    assert_eq!(v["n_list"], serde_json::json!([]));
    assert!(v["slope_sup"].is_null());
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv, "n,metric,estimate,stderr\n");
}

#[test]
fn report_round_trips_and_has_one_csv_row_per_metric() {
    let dir = tempfile::tempdir().unwrap();
    let n_list = [4, 8, 16, 32];
    let report = run_sweep(&plan("binding-1d", 64, &n_list, 500)).unwrap();
    assert!(report.complete && report.failure.is_none());
    assert_eq!(report.levels.len(), 4);
    assert_eq!(report.cauchy.len(), 3);
    emit_report(&report, dir.path()).unwrap();
    let back: RateReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + n_list.len() * 4);
    for name in [
        "sup_dist_sq",
        "int_dist_sq",
        "tv_lambda",
        "sup_y_sq",
        "cauchy_sq",
    ] {
        let dat =
            fs::read_to_string(dir.path().join("plotdata").join(format!("{name}.dat"))).unwrap();
        let mut lines = dat.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        for line in lines {
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|c| c.parse().unwrap())
                .collect();
            assert_eq!(cols.len(), 2);
        }
    }
}

#[test]
fn non_binding_sweep_has_zero_metrics_and_no_slopes() {
    let report = run_sweep(&plan("martingale", 16, &[4, 8, 16, 32], 1000)).unwrap();
    for lv in &report.levels {
        assert_eq!(lv.sup_dist_sq.estimate, 0.0);
        assert_eq!(lv.tv_lambda.estimate, 0.0);
    }
    assert!(report.slope_sup.is_none());
    assert!(report.slope_int.is_none());
}

#[test]
fn sweeps_are_byte_identical_across_thread_counts() {
    let p = plan("shrinking-ball-jumps", 32, &[4, 8, 16], 400);
    let run_in = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let report = pool.install(|| run_sweep(&p)).unwrap();
        emit_report(&report, dir.path()).unwrap();
        let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
        (read("report.json"), read("metrics.csv"))
    };
    let one = run_in(1);
    assert_eq!(one, run_in(1));
    assert_eq!(one, run_in(3));
}

#[test]
fn invalid_plans_are_rejected() {
    let mut p = plan("binding-1d", 16, &[8, 4], 100);
    assert!(run_sweep(&p).is_err());
    p = plan("binding-1d", 16, &[4, 8], 100);
    p.replications = 2;
    assert!(run_sweep(&p).is_err());
}
