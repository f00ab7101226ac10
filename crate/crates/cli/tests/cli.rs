//! End-to-end runs of the `fairalign` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fairalign::clustering::{Centers, Mode};
use fairalign::data::{generate_synthetic, SyntheticSpec};
use fairalign::metrics::{balance, cost};
use serde_json::Value;

const SYN: &str = "n=400,d=2,J=4,seed=3";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn out_dir(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn sweep_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(str::to_owned).collect()
}

#[test]
fn fit_writes_result_json() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fit", "--synthetic", SYN, "--k", "4", "--out", out_dir(dir.path())]);
    let v = read_json(&dir.path().join("result.json"));
    assert_eq!(v["k"], 4);
    assert_eq!(v["n"], 400);
    assert_eq!(v["labels"].as_array().unwrap().len(), 400);
    assert_eq!(v["centers"].as_array().unwrap().len(), 4);
    assert!(v["metrics"]["fairness_gap"].as_f64().unwrap() < 1e-6);
    assert!(!v["history"].as_array().unwrap().is_empty());
}

#[test]
fn result_json_round_trips_to_metrics() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fit", "--synthetic", SYN, "--k", "3", "--seed", "5", "--out", out_dir(dir.path())]);
    let v = read_json(&dir.path().join("result.json"));
    let ds = generate_synthetic(&SyntheticSpec::new(400, 2, 4, 3)).unwrap().dataset;

    let labels: Vec<usize> = v["labels"].as_array().unwrap().iter().map(|l| l.as_u64().unwrap() as usize).collect();
    let flat: Vec<f64> = v["centers"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|row| row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()))
        .collect();
    let centers = Centers::new(flat, 2).unwrap();
    let c = cost(&ds, &centers, &labels, Mode::KMeans);
    let b = balance(&labels, ds.groups(), 3);
    assert!((c - v["metrics"]["cost"].as_f64().unwrap()).abs() <= 1e-12 * c.max(1.0));
    assert!((b - v["metrics"]["balance"].as_f64().unwrap()).abs() <= 1e-12);
}

#[test]
fn epsilon_zero_matches_fair_fit() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&["fit", "--synthetic", SYN, "--k", "3", "--out", out_dir(a.path())]);
    ok(&["fit", "--synthetic", SYN, "--k", "3", "--epsilon", "0", "--out", out_dir(b.path())]);
    let (va, vb) = (read_json(&a.path().join("result.json")), read_json(&b.path().join("result.json")));
    assert_eq!(va["labels"], vb["labels"]);
    assert_eq!(va["centers"], vb["centers"]);
    assert_eq!(va["metrics"]["cost"], vb["metrics"]["cost"]);
}

#[test]
fn exports_coupling_and_assignment() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "fit",
        "--synthetic",
        SYN,
        "--k",
        "2",
        "--export-coupling",
        "--export-assignment",
        "--out",
        out_dir(dir.path()),
    ]);
    let assignment = fs::read_to_string(dir.path().join("assignment.csv")).unwrap();
    let mut lines = assignment.lines();
    assert_eq!(lines.next(), Some("p0,p1"));
    for line in lines.clone() {
        let total: f64 = line.split(',').map(|p| p.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    assert_eq!(lines.count(), 400);

    let coupling = fs::read_to_string(dir.path().join("coupling.csv")).unwrap();
    let mass: f64 = coupling
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((mass - 1.0).abs() < 1e-9, "coupling mass {mass}");
}

#[test]
fn missing_k_is_a_usage_error() {
    let out = run(&["fit", "--synthetic", SYN]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_grid_value_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--synthetic", SYN, "--k", "2", "--grid", "0.5,1.5", "--out", out_dir(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_one() {
    let out = run(&["fit", "--input", "/nonexistent/data.csv", "--group", "g", "--k", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn default_sweep_has_seventeen_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "sweep",
        "--synthetic",
        "n=200,d=2,J=4,seed=1",
        "--k",
        "3",
        "--max-iter",
        "10",
        "--out",
        out_dir(dir.path()),
    ]);
    let path = dir.path().join("sweep.csv");
    let header = fs::read_to_string(&path).unwrap().lines().next().unwrap().to_owned();
    assert_eq!(
        header,
        "epsilon,cost,balance,fairness_gap,prop42_bound_lhs,prop42_bound_rhs,runtime_ms"
    );
    let rows = sweep_rows(&path);
    assert_eq!(rows.len(), 17);
    assert!(rows[0].starts_with("0.1,"));
    assert!(rows[16].starts_with("0.9,"));
}

#[test]
fn sweep_is_deterministic_without_timing() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        ok(&[
            "sweep",
            "--synthetic",
            SYN,
            "--k",
            "3",
            "--grid",
            "0,0.5,1",
            "--seed",
            "9",
            "--no-timing",
            "--out",
            out_dir(dir.path()),
        ]);
    }
    let rows = sweep_rows(&a.path().join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows, sweep_rows(&b.path().join("sweep.csv")));
}

#[test]
fn generate_then_fit_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mix.csv");
    ok(&["generate", "--synthetic", "n=300,d=3,J=4,seed=2", "--output", csv.to_str().unwrap()]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("x0,x1,x2,group,component"));
    assert_eq!(text.lines().count(), 301);

    ok(&[
        "fit",
        "--input",
        csv.to_str().unwrap(),
        "--group",
        "group",
        "--features",
        "x0,x1,x2",
        "--k",
        "3",
        "--out",
        out_dir(dir.path()),
    ]);
    let v = read_json(&dir.path().join("result.json"));
    assert_eq!(v["d"], 3);
    assert_eq!(v["feature_names"], serde_json::json!(["x0", "x1", "x2"]));
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let out = ok(&["verify", "--instances", "5"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("checks passed"));
    let broken = run(&["verify", "--instances", "5", "--break", "marginals"]);
    assert_eq!(broken.status.code(), Some(1));
}
