use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rbsde(args: &[&str], out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rbsde"));
    cmd.args(args).arg("--out").arg(out);
    match threads {
        Some(t) => cmd.env("RBSDE_THREADS", t),
        None => cmd.env_remove("RBSDE_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn solve_constant_prints_the_terminal_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = rbsde(
        &[
            "solve",
            "--scenario",
            "constant",
            "--steps",
            "16",
            "--paths",
            "500",
        ],
        dir.path(),
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let line = stdout(&o);
    assert!(line.contains("Y0_mean=[0.300000, -0.200000]"), "{line}");
    assert!(line.contains("tv_lambda=0.000000e0"), "{line}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("solve.json")).unwrap()).unwrap();
    let y0: Vec<f64> = serde_json::from_value(json["y0_mean"].clone()).unwrap();
    assert!((y0[0] - 0.3).abs() <= 1e-10 && (y0[1] + 0.2).abs() <= 1e-10);
    assert!(dir.path().join("solution.csv").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["code_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn expanding_domain_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let o = rbsde(
        &["validate", "--scenario", "expanding-ball"],
        dir.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn diagnose_writes_the_skorokhod_report() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "diagnose",
        "--scenario",
        "binding-1d",
        "--steps",
        "128",
        "--paths",
        "800",
        "--n-penalty",
        "256",
    ];
    let o = rbsde(&args, dir.path(), None);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("alignment_min=1.000000000000"));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("skorokhod.json")).unwrap())
            .unwrap();
    assert!(rep["tv_total"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_is_reproducible_across_runs_and_thread_counts() {
    let args = [
        "sweep",
        "--scenario",
        "binding-1d",
        "--seed",
        "7",
        "--steps",
        "64",
        "--paths",
        "600",
        "--replications",
        "3",
    ];
    let mut outputs = Vec::new();
    for threads in [None, Some("1"), Some("2")] {
        let dir = tempfile::tempdir().unwrap();
        let o = rbsde(&args, dir.path(), threads);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        outputs.push((
            fs::read(dir.path().join("report.json")).unwrap(),
            fs::read(dir.path().join("metrics.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn misspelled_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        r#"
horizon = 1.0
[tube]
kind = "ball"
center = [0.0]
radiusp_oly = [1.0]
[noise]
brownian_dim = 1
[forward]
x0 = [0.0]
sigma = [[1.0]]
[terminal]
kind = "constant"
value = [0.0]
[driver]
kind = "zero"
"#,
    )
    .unwrap();
    let o = rbsde(
        &["validate", "--config", cfg.to_str().unwrap()],
        dir.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("radiusp_oly"));
}

#[test]
fn blow_up_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("blowup.toml");
    fs::write(
        &cfg,
        r#"
horizon = 1.0
[tube]
kind = "interval"
lo_poly = [-10.0]
hi_poly = [10.0]
[noise]
brownian_dim = 1
[forward]
x0 = [0.0]
sigma = [[1.0]]
[terminal]
kind = "constant"
value = [1.0]
[driver]
kind = "linear"
y_coeff = 1e100
offset = [0.0]
"#,
    )
    .unwrap();
    let o = rbsde(
        &[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "8",
            "--paths",
            "200",
        ],
        dir.path(),
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn usage_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        rbsde(&["solve", "--scenario", "nope"], dir.path(), None)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        rbsde(
            &["solve", "--scenario", "constant", "--paths", "0"],
            dir.path(),
            None
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        rbsde(&["solve", "--scenario", "constant"], dir.path(), Some("x"))
            .status
            .code(),
        Some(1)
    );
    let help = Command::new(env!("CARGO_BIN_EXE_rbsde"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(help.status.code(), Some(0));
}
