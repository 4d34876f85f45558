//! Drives the compiled binary the way CI would: JSON config in, report and
//! exit status out.

use std::fs;
use std::process::Command;

fn run(command: &str, config: &str, out: &std::path::Path) -> std::process::Output {
    let config_path = out.join("config.json");
    fs::write(&config_path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_quasilab"))
        .args([command, "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn diagnose_space_passes_on_interval_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(
        "diagnose-space",
        r#"{ "space": { "kind": "interval", "n": 101, "length": 1.0 },
            "max_doubling": 2.3, "max_p0": 1.0 }"#,
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let report = fs::read_to_string(dir.path().join("diagnose_space_report.json")).unwrap();
    assert!(report.contains("\"pass\": true"));
    assert!(dir.path().join("doubling_by_radius.csv").exists());
}

#[test]
fn failing_threshold_sets_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(
        "diagnose-space",
        r#"{ "space": { "kind": "interval", "n": 101, "length": 1.0 },
            "max_doubling": 1.5 }"#,
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn malformed_config_sets_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let output = run("solve", r#"{ "nonsense": true }"#, dir.path());
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn reports_are_reproducible_modulo_timing() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let config = r#"{
        "space": { "kind": "interval", "n": 17, "length": 1.0 },
        "grid": { "t_end": 0.1, "steps": 16 },
        "field": { "kind": "heat_series", "a": 2.0, "coefficients": [1.0] },
        "alpha": 2.0, "p": 2.0,
        "family": { "count": 10 },
        "budget": 40, "seed": 5
    }"#;
    let a = run("estimate-k", config, dir_a.path());
    let b = run("estimate-k", config, dir_b.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let strip = |dir: &std::path::Path| {
        let text = fs::read_to_string(dir.join("estimate_k_report.json")).unwrap();
        text.lines()
            .filter(|l| !l.contains("runtime_seconds"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(dir_a.path()), strip(dir_b.path()));
}

#[test]
fn seed_override_changes_the_family() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let config = r#"{
        "space": { "kind": "interval", "n": 17, "length": 1.0 },
        "grid": { "t_end": 0.1, "steps": 16 },
        "field": { "kind": "heat_series", "a": 2.0, "coefficients": [1.0] },
        "alpha": 2.0, "p": 2.0,
        "family": { "count": 10 },
        "budget": 40, "seed": 5
    }"#;
    let a = run("estimate-k", config, dir_a.path());
    let config_path = dir_b.path().join("config.json");
    fs::write(&config_path, config).unwrap();
    let b = Command::new(env!("CARGO_BIN_EXE_quasilab"))
        .args(["estimate-k", "--config"])
        .arg(&config_path)
        .args(["--seed", "99", "--out"])
        .arg(dir_b.path())
        .output()
        .unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let read = |dir: &std::path::Path| {
        fs::read_to_string(dir.join("estimate_k_report.json")).unwrap()
    };
    assert!(read(dir_a.path()).contains("\"seed\": 5"));
    assert!(read(dir_b.path()).contains("\"seed\": 99"));
}
