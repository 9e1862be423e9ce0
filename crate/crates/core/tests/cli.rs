use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybrid-dispatch"))
}

fn ok(cmd: &mut Command) {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "{cmd:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Synthetic year, its calibration, and a small hourly config on one of its days.
fn calibrated_setup(dir: &Path) -> std::path::PathBuf {
    let csv = dir.join("synthetic.csv");
    let model = dir.join("model.json");
    ok(bin().args(["synth", "--days", "120", "--seed", "7", "--out"]).arg(&csv));
    ok(bin().arg("calibrate").arg("--data").arg(&csv).arg("--out").arg(&model));
    let config = dir.join("run.toml");
    fs::write(
        &config,
        r#"
[model]
kind = "calibrated"
path = "model.json"
profiles = "synthetic.csv"
day = "2021-01-04"

[battery]
b_max = 0.1
duration = 3.0
soc_min = 0.05
soc_max = 0.95
eta = 0.95
terminal_penalty = 1.0

[objective]
kind = "quadratic"
target = "forecast"

[design]
n_loc = 100
n_rep = 10
n_b = 100

[run]
n_paths = 400
seed = 3
out_dir = "out"
"#,
    )
    .unwrap();
    config
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_then_rollout_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = calibrated_setup(dir.path());
    let policy = dir.path().join("policy.json");
    ok(bin().arg("solve").arg("--config").arg(&config).arg("--out").arg(&policy));
    for run in ["a", "b"] {
        ok(bin()
            .args(["rollout", "--paths", "300", "--seed", "11", "--policy"])
            .arg(&policy)
            .arg("--out")
            .arg(dir.path().join(run)));
    }
    let a = fs::read(dir.path().join("a/metrics.json")).unwrap();
    let b = fs::read(dir.path().join("b/metrics.json")).unwrap();
    assert_eq!(a, b);
    let metrics = read_json(&dir.path().join("a/metrics.json"));
    assert_eq!(metrics["payload"]["n_paths"], 300);
    assert!(dir.path().join("a/bands.csv").exists());
}

#[test]
fn longer_battery_firms_more() {
    let dir = tempfile::tempdir().unwrap();
    let config = calibrated_setup(dir.path());
    ok(bin().arg("sweep").arg("--config").arg(&config).args(["--param", "duration", "--grid", "3,6"]));
    let rows = read_json(&dir.path().join("out/sweep_duration.json"));
    let dr: Vec<f64> = rows["payload"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["metrics"]["edr"]["mean"].as_f64().unwrap())
        .collect();
    assert_eq!(dr.len(), 2);
    assert!(dr[1] >= dr[0], "EDR at 6h {} below 3h {}", dr[1], dr[0]);
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[model]\nkind = \"jacobi\"\nalpha = 0.5\n").unwrap();
    let out = bin().arg("solve").arg("--config").arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
