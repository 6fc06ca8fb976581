use std::path::Path;
use std::process::Command;

use ncm_cli::config::ScenarioConfig;
use ncm_cli::runner::{run, RunOptions};
use ncm_cli::CliError;
use ncm_core::QubitState;

// Short pulses keep each point well under a second.
const SMALL: &str = r#"
[scenario]
name = "small"
preparations = ["plus", "minus"]
omega_mhz = [0.0, 3.0]
n_ref = [0.2]

[model]
decoherence = false
n_max = 11

[schedule]
drive_duration_us = 0.8
probe_duration_us = 0.5
record_us = 0.8

[numerics]
n_freq = 81
"#;

fn small() -> ScenarioConfig {
    ScenarioConfig::parse(SMALL).unwrap()
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        out_dir: dir.to_path_buf(),
        ..RunOptions::default()
    }
}

fn ncm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ncm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn small_run_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let s = run(&small(), &opts(tmp.path())).unwrap();
    assert_eq!(s.points.len(), 4);
    assert_eq!(s.ledgers.len(), 1);
    for f in ["n_vs_omega.csv", "fits.csv", "ledger.csv", "manifest.txt"] {
        assert!(s.dir.join(f).is_file(), "{f} missing");
    }
    let manifest = std::fs::read_to_string(s.dir.join("manifest.txt")).unwrap();
    for (rel, sha) in &s.files {
        assert!(manifest.contains(rel.as_str()) && manifest.contains(sha.as_str()));
    }
    let n = s.point(0.2, 0.0, QubitState::Plus).unwrap().photons;
    assert!((n - 0.2).abs() < 2e-3, "calibrated photons {n}");
}

#[test]
fn manifest_reruns_to_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let first = run(&small(), &opts(&tmp.path().join("a"))).unwrap();
    let echoed = ScenarioConfig::load(&first.dir.join("manifest.txt")).unwrap();
    assert_eq!(echoed.scenario, small().scenario);
    let second = run(&echoed, &opts(&tmp.path().join("b"))).unwrap();
    assert_eq!(first.files, second.files);
}

#[test]
fn empty_sweep_is_rejected_before_simulating() {
    let mut cfg = small();
    cfg.scenario.omega_mhz.clear();
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(run(&cfg, &opts(tmp.path())), Err(CliError::Validation(_))));
    assert!(!tmp.path().join("small").exists());
}

#[test]
fn validate_reports_every_problem() {
    let mut cfg = small();
    cfg.numerics.dtc_ns = 60.0; // Nyquist 8.3 MHz < 10 MHz band
    cfg.numerics.dt_ns = 7.0; // 60/7 is fractional
    cfg.model.n_max = 1;
    let report = cfg.validate();
    assert!(report.problems.len() >= 3, "{:?}", report.problems);
    assert!(report.render("small").contains("problem(s)"));
}

#[test]
fn unknown_keys_are_errors() {
    let text = SMALL.replace("n_max = 11", "n_max = 11\nnmax = 11");
    assert!(ScenarioConfig::parse(&text).is_err());
}

#[test]
fn binary_lists_and_validates() {
    let out = ncm(&["list-scenarios"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fig3b-sim", "fig3d-sim", "fig4-ideal", "fig4-exp"] {
        assert!(text.contains(name));
    }
    let out = ncm(&["validate", "fig4-ideal"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    let out = ncm(&["validate", "no-such-scenario"]);
    assert!(!out.status.success());

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("dt_ns", "x").replace("n_freq = 81", "n_freq = 1")).unwrap();
    let out = ncm(&["validate", bad.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn binary_runs_a_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("small.toml");
    std::fs::write(&file, SMALL.replace("omega_mhz = [0.0, 3.0]", "omega_mhz = [2.0]")).unwrap();
    let out_dir = tmp.path().join("out");
    let out = ncm(&[
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--workers",
        "2",
        "--dtc-ns",
        "20",
        "run",
        file.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join("small/manifest.txt")).unwrap();
    assert!(manifest.contains("dtc_ns = 20"));
}
