use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybrid_htf::HarmonicTransferSet;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-htf"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn write_config(dir: &Path, value: Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, value.to_string()).unwrap();
    path
}

/// Shortened experiment for end-to-end runs.
fn small_identify_config(amplitude: f64) -> Value {
    json!({
        "chirp": { "amplitude": amplitude, "segment_duration": 10.0, "n_segments": 3 },
        "estimate": { "n_harmonics": 1 },
        "theory": { "n_h": 4, "n_keep": 1 },
        "fit": { "n_h": 4 }
    })
}

fn digest(path: PathBuf) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn simulate_reports_unit_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["simulate", "--duration", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(dir.path().join("summary.json"));
    assert_eq!(summary["period"], json!(1.0));
    assert_eq!(summary["samples_per_period"], json!(1000));
    assert_eq!(summary["crossings"], json!(2));
    let duty = summary["duty"].as_f64().unwrap();
    assert!(duty > 0.0 && duty < 1.0);
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("t,x,xdot,u,chart"));
    assert_eq!(traj.lines().count(), 1 + 3001);
    let resolved = read_json(dir.path().join("resolved_config.json"));
    assert_eq!(resolved["model"]["k"], json!(200.0));
}

#[test]
fn simulate_is_bit_for_bit_repeatable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        assert_eq!(code(&run(dir.path(), &["simulate", "--duration", "2"])), 0);
    }
    for file in ["trajectory.csv", "cycle.csv", "summary.json"] {
        assert_eq!(digest(a.path().join(file)), digest(b.path().join(file)), "{file}");
    }
}

#[test]
fn invalid_inputs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["simulate", "--duration", "0"])), 2);
    assert_eq!(code(&run(dir.path(), &["--dt", "0.1", "simulate"])), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run(dir.path(), &["--config", missing.to_str().unwrap(), "simulate"])), 2);
    let bad = write_config(dir.path(), json!({ "model": { "m": 1.0 }, "colour": "blue" }));
    let out = run(dir.path(), &["--config", bad.to_str().unwrap(), "htf-theory"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn undamped_theory_has_no_side_harmonics() {
    let dir = tempfile::tempdir().unwrap();
    let mut params = serde_json::to_value(hybrid_htf::ModelParams::default()).unwrap();
    params["c"] = json!(0.0);
    // A bare parameter file is accepted as a configuration.
    let cfg = write_config(dir.path(), params);
    let out = run(dir.path(), &["--config", cfg.to_str().unwrap(), "--nh", "5", "htf-theory"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let set = HarmonicTransferSet::read_csv(dir.path().join("htf_theory.csv")).unwrap();
    assert_eq!(set.harmonics.len(), 11);
    for (n, values) in &set.harmonics {
        if *n != 0 {
            assert!(values.iter().all(|z| z.norm() < 1e-10), "n = {n}");
        }
    }
    let summary = read_json(dir.path().join("theory_summary.json"));
    assert!(summary["beyond_keep_ratio"].as_f64().unwrap() < 1e-8);
}

#[test]
fn compare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--nh", "4", "htf-theory"])), 0);
    let reference = dir.path().join("reference.csv");
    std::fs::rename(dir.path().join("htf_theory.csv"), &reference).unwrap();

    let other = tempfile::tempdir().unwrap();
    let mut params = serde_json::to_value(hybrid_htf::ModelParams::default()).unwrap();
    params["k"] = json!(230.0);
    let cfg = write_config(other.path(), params);
    assert_eq!(code(&run(other.path(), &["--config", cfg.to_str().unwrap(), "--nh", "4", "htf-theory"])), 0);
    let shifted = other.path().join("htf_theory.csv");

    let r = reference.to_str().unwrap();
    assert_eq!(code(&run(dir.path(), &["compare", r, r])), 0);
    let report = read_json(dir.path().join("compare.json"));
    assert_eq!(report["pass"], json!(true));
    assert_eq!(code(&run(dir.path(), &["compare", shifted.to_str().unwrap(), r])), 1);
    assert_eq!(read_json(dir.path().join("compare.json"))["pass"], json!(false));
    let garbage = dir.path().join("garbage.csv");
    std::fs::write(&garbage, "not,a,transfer,set\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["compare", garbage.to_str().unwrap(), r])), 2);
}

#[test]
fn identify_end_to_end_and_from_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small_identify_config(0.004));
    let cfg = cfg.to_str().unwrap();
    let out = run(dir.path(), &["--config", cfg, "simulate", "--duration", "1", "--experiments"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bundle = dir.path().join("experiments");
    assert!(bundle.join("plan.json").exists() && bundle.join("rec_2.csv").exists());

    let out = run(dir.path(), &["--config", cfg, "identify"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["htf_estimate.csv", "htf_estimate_plot.csv", "estimate_diagnostics.json", "htf_theory_grid.csv", "htf_diff.csv"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let fit = read_json(dir.path().join("fit.json"));
    let fresh = (fit["k_hat"].as_f64().unwrap(), fit["c_hat"].as_f64().unwrap());
    assert!((fresh.0 / 200.0 - 1.0).abs() < 0.05, "{fit}");

    let out = run(dir.path(), &["--config", cfg, "identify", "--records", bundle.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fit = read_json(dir.path().join("fit.json"));
    // Records are stored to full precision, so the fit is reproduced.
    assert!((fit["k_hat"].as_f64().unwrap() - fresh.0).abs() < 1e-6 * fresh.0);
    assert!((fit["c_hat"].as_f64().unwrap() - fresh.1).abs() < 1e-6 * fresh.1);
}

#[test]
fn silent_excitation_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small_identify_config(0.0));
    let out = run(dir.path(), &["--config", cfg.to_str().unwrap(), "identify"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
