use std::process::Command;

const SCENARIO: &str = r#"
[scenario]
id = "cli-positivity"
kind = "positivity-mass"
seeds = [1]

[pde]
m = 2.0
cells = 32
t_end = 0.02
initial = [{ kind = "bump", center = 0.5, width = 0.2 }]

[coefficient]
kind = "basis"
basis = ["sin2:1", "sin2:2"]
scale = 0.5

[path]
kind = "brownian"
steps = 32
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roughpme"))
}

#[test]
fn experiment_writes_to_env_directory_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, SCENARIO).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .arg("experiment")
        .arg(&cfg)
        .env("ROUGHPME_OUT", &out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS positivity"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], true);
    assert!(out_dir.join("series.csv").exists());
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    // A negative mass tolerance cannot be met.
    std::fs::write(&cfg, format!("{SCENARIO}\n[tolerances]\nmass = -1.0\n")).unwrap();
    let out = bin()
        .args(["experiment", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL interior_mass"));
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, SCENARIO.replace("m = 2.0", "m = -2.0")).unwrap();
    let out = bin().arg("experiment").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn characteristics_emits_csv() {
    let out = bin()
        .args([
            "characteristics",
            "--nx",
            "2",
            "--nxi",
            "3",
            "--horizon",
            "0.5",
            "--every",
            "1000",
            "--scale",
            "0.5",
            "--dt",
            "1e-4",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,xi0,t,X,Xi,detJ"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() >= 6);
    for r in &rows {
        assert!((r[5] - 1.0).abs() < 1e-6, "{r:?}");
    }
    // ξ = 0 probes keep Ξ = 0.
    assert!(rows.iter().filter(|r| r[1] == 0.0).all(|r| r[4] == 0.0));
}

#[test]
fn simulate_writes_snapshots_and_stability_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    let text = SCENARIO.replace(
        "[scenario]\nid = \"cli-positivity\"\nkind = \"positivity-mass\"\nseeds = [1]\n",
        "seed = 3\nrecord_times = [0.01]\n",
    );
    std::fs::write(&cfg, text).unwrap();
    let out = bin()
        .args(["simulate", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stability: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(stability["combined"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    assert!(csv.starts_with("t,x,u\n"));
    // Initial state, the requested time and the end.
    assert_eq!(csv.lines().count(), 1 + 3 * 32);
}
