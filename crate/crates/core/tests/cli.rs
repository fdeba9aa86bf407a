use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edgesense::experiments::{esaki_tsu, log_grid, SweepTable};
use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgesense")).args(args).env("EDGESENSE_THREADS", "1").output().unwrap()
}

fn small_overrides() -> Vec<&'static str> {
    vec!["--override", "lattice.L=8", "--override", "leads.M=10", "--override", "decoherence.kappa=0.01"]
}

#[test]
fn spectrum_of_fig1_flags_two_edge_states() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["spectrum", "--config", config("fig1.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let edge_col = headers.iter().position(|h| h == "edge").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 60);
    assert_eq!(rows.iter().filter(|r| &r[edge_col] == "1").count(), 2);
}

#[test]
fn steady_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("fig1.json");
    for d in [&a, &b] {
        let mut args = vec!["steady", "--config", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()];
        args.extend(small_overrides());
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let sa = fs::read(a.path().join("steady.json")).unwrap();
    assert_eq!(sa, fs::read(b.path().join("steady.json")).unwrap());
    let doc: Value = serde_json::from_slice(&sa).unwrap();
    assert_eq!(doc["fingerprint"].as_str().unwrap().len(), 16);
    assert_eq!(doc["populations"].as_array().unwrap().len(), 8);
}

#[test]
fn fingerprint_tracks_physics_not_output() {
    let cfg = config("fig1.json");
    let fp = |extra: &[&str]| {
        let d = tempfile::tempdir().unwrap();
        let mut args = vec!["steady", "--config", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()];
        args.extend(small_overrides());
        args.extend_from_slice(extra);
        assert_eq!(run(&args).status.code(), Some(0));
        let doc: Value = serde_json::from_slice(&fs::read(d.path().join("steady.json")).unwrap()).unwrap();
        doc["fingerprint"].as_str().unwrap().to_string()
    };
    let base = fp(&[]);
    assert_eq!(base, fp(&["--override", "output.path=elsewhere"]));
    assert_ne!(base, fp(&["--override", "coupling.epsilon=0.25"]));
}

#[test]
fn bad_config_reports_json_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(config("fig1.json")).unwrap()).unwrap();
    doc["leads"]["gama"] = Value::from(0.1);
    fs::write(&p, doc.to_string()).unwrap();
    let out = run(&["steady", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["path"].as_str().unwrap().contains("leads"));

    let reverse = run(&[
        "steady",
        "--config",
        config("fig1.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "leads.mu_L=-0.1",
        "--override",
        "leads.mu_R=0.1",
    ]);
    assert_eq!(reverse.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&reverse.stderr).contains("mu_L"));
}

#[test]
fn missing_config_is_io_error() {
    let out = run(&["spectrum", "--config", "/nonexistent/edgesense.json"]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn fit_recovers_synthetic_esaki_tsu() {
    let dir = tempfile::tempdir().unwrap();
    let kappa = log_grid(1e-4, 1.0, 25).unwrap();
    let (a, c) = (3e-4, 2.5e-3);
    let n = kappa.len();
    let table = SweepTable {
        axis_name: "kappa".into(),
        current: kappa.iter().map(|&k| esaki_tsu(a, c, k)).collect(),
        axis_values: kappa,
        residuals: vec![1e-12; n],
        imbalance: vec![0.0; n],
        gradient: vec![0.0; n],
        extra_columns: vec![],
        config_fingerprint: "feedfacecafebeef".into(),
    };
    let csv = dir.path().join("sweep_kappa.csv");
    table.write_csv(&csv).unwrap();
    let out = run(&["fit", "--input", csv.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&fs::read(dir.path().join("fit.json")).unwrap()).unwrap();
    assert!((doc["a"].as_f64().unwrap() / a - 1.0).abs() < 1e-6);
    assert!((doc["c"].as_f64().unwrap() / c - 1.0).abs() < 1e-6);
    assert_eq!(doc["fingerprint"], "feedfacecafebeef");
}

#[test]
fn small_kappa_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("fig2.json");
    let mut args = vec!["sweep-kappa", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    args.extend(small_overrides());
    args.extend(["--override", "sweep.log_range.points=6"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t = SweepTable::read_csv(&dir.path().join("sweep_kappa.csv")).unwrap();
    assert_eq!(t.len(), 6);
    assert!(t.failed_rows().is_empty());
    assert!(t.current.iter().all(|j| j.is_finite()));
}
