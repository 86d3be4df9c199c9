use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dlet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn dlet")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = dlet(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8(out.stdout).unwrap();
    let text = std::fs::read_to_string(dir.join(report.trim())).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn basis_reports_filters_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(dir.path(), &["--format", "csv", "basis", "--order", "4"]);
    assert_eq!(report["schema"], "dlet-1");
    assert_eq!(report["command"], "basis");
    assert!(report["results"]["max_residual"].as_f64().unwrap() < 1e-10);
    let father = rows(&dir.path().join("father.csv"));
    let mother = rows(&dir.path().join("mother.csv"));
    assert_eq!(father.len(), 7 * 1024 + 1);
    assert_eq!(mother.len(), father.len());
    let step = 1.0 / 1024.0;
    let mass: f64 = father.iter().map(|r| r[1]).sum::<f64>() * step;
    assert!((mass - 1.0).abs() < 1e-6, "{mass}");
}

#[test]
fn haar_basis_is_a_box() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--format", "csv", "basis", "--order", "1", "--resolution", "6"]);
    let father = rows(&dir.path().join("father.csv"));
    for r in &father[..father.len() - 1] {
        assert!((r[1] - 1.0).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn unsupported_order_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlet(dir.path(), &["basis", "--order", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("order"));
    let out = dlet(dir.path(), &["basis", "--order", "11"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_expansion_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlet(dir.path(), &["reconstruct", "--expansion", "nope.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn constant_has_no_detail() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(dir.path(), &["decompose", "--input", "constant(2.5)"]);
    assert!(report["results"]["max_abs_beta"].as_f64().unwrap() < 1e-10);
    assert!(report["results"]["round_trip_max_error"].as_f64().unwrap() < 1e-10);
    let exp: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("expansion.json")).unwrap()).unwrap();
    assert_eq!(exp["schema"], "dlet-1");
}

#[test]
fn call_payoff_detail_concentrates_at_the_strike() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(
        dir.path(),
        &["decompose", "--input", "call_payoff(8)", "--origin", "0", "--length", "16", "--levels", "4"],
    );
    assert!(report["results"]["round_trip_max_error"].as_f64().unwrap() < 1e-10);
    let exp: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("expansion.json")).unwrap()).unwrap();
    // Finest level i = 3: translate k is supported on [k, k + 7] / 8.
    let finest: Vec<(i64, f64)> = exp["beta"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|t| t[0] == 3)
        .map(|t| (t[1].as_i64().unwrap(), t[2].as_f64().unwrap().abs()))
        .collect();
    let peak = |keep: &dyn Fn(i64) -> bool| finest.iter().filter(|(k, _)| keep(*k)).map(|t| t.1).fold(0.0, f64::max);
    let near = peak(&|k| (57..=64).contains(&k));
    let far = peak(&|k| (16..=41).contains(&k) || (80..=105).contains(&k));
    assert!(near > 100.0 * far, "near {near} far {far}");
}

#[test]
fn csv_terminal_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("x,value\n");
    for i in 0..=256 {
        let x = i as f64 / 16.0;
        text += &format!("{x},{}\n", (x / 3.0).sin() * (-(x - 8.0).powi(2) / 10.0).exp());
    }
    std::fs::write(dir.path().join("terminal.csv"), text).unwrap();
    let report = ok(dir.path(), &["decompose", "--input", "terminal.csv", "--levels", "4"]);
    assert!(report["results"]["round_trip_max_error"].as_f64().unwrap() < 1e-10);
}

#[test]
fn reconstruct_at_zero_reproduces_the_input() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["decompose", "--input", "gaussian_bump(8,1.5)", "--levels", "3"]);
    ok(
        dir.path(),
        &["--format", "csv", "reconstruct", "--expansion", "expansion.json", "--taus", "0", "--nx", "129"],
    );
    let out = rows(&dir.path().join("reconstruction.csv"));
    assert_eq!(out.len(), 129);
    for r in &out[..128] {
        let exact = (-(r[1] - 8.0).powi(2) / (2.0 * 1.5 * 1.5)).exp();
        assert!((r[2] - exact).abs() < 1e-6, "{r:?} vs {exact}");
    }
}

#[test]
fn zero_weights_give_zero_variance() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["decompose", "--input", "gaussian_bump(8,1)", "--levels", "2"]);
    let report = ok(
        dir.path(),
        &["--format", "csv", "variance", "--expansion", "expansion.json", "--taus", "0,0.25", "--nx", "9", "--c", "0"],
    );
    assert_eq!(report["results"]["max_variance"].as_f64(), Some(0.0));
    assert!(rows(&dir.path().join("variance.csv")).iter().all(|r| r[2] == 0.0));
}

#[test]
fn covariance_diagonal_matches_variance() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["decompose", "--input", "gaussian_bump(8,1)", "--levels", "2"]);
    let common = ["--expansion", "expansion.json", "--taus", "0.25", "--nx", "5", "--eta", "0.5"];
    let mut args = vec!["--format", "csv", "variance"];
    args.extend(common);
    ok(dir.path(), &args);
    args[2] = "covariance";
    ok(dir.path(), &args);
    let variance = rows(&dir.path().join("variance.csv"));
    let covariance = rows(&dir.path().join("covariance.csv"));
    assert_eq!(covariance.len(), variance.len() * variance.len());
    for v in &variance {
        let diag = covariance.iter().find(|c| c[0] == v[0] && c[1] == v[1] && c[2] == v[0] && c[3] == v[1]).unwrap();
        assert!((diag[4] - v[2]).abs() <= 1e-12 * v[2].abs().max(1.0), "{diag:?} {v:?}");
    }
    for c in &covariance {
        let mirror = covariance.iter().find(|m| m[0] == c[2] && m[1] == c[3] && m[2] == c[0] && m[3] == c[1]).unwrap();
        assert_eq!(mirror[4], c[4]);
    }
}

#[test]
fn stored_cache_matches_on_the_fly() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["decompose", "--input", "gaussian_bump(8,1)", "--levels", "2"]);
    ok(dir.path(), &["--out", "c", "cache", "--tau-max", "1"]);
    let a = ok(
        dir.path(),
        &["--out", "x", "reconstruct", "--expansion", "expansion.json", "--taus", "0.25", "--cache", "c/cache.bin"],
    );
    let b = ok(dir.path(), &["--out", "y", "reconstruct", "--expansion", "expansion.json", "--taus", "0.25"]);
    let va = a["results"]["values"].as_array().unwrap();
    let vb = b["results"]["values"].as_array().unwrap();
    assert_eq!(va.len(), vb.len());
    for (p, q) in va.iter().zip(vb) {
        assert!((p[2].as_f64().unwrap() - q[2].as_f64().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn solve_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(
        dir.path(),
        &["--format", "csv", "solve", "--input", "gaussian_bump(0,1)", "--taus", "0.5,1", "--nx", "257", "--nt", "128"],
    );
    let taus: Vec<f64> = report["results"]["tau_grid"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(taus, vec![0.0, 0.5, 1.0]);
    let out = rows(&dir.path().join("solution.csv"));
    assert_eq!(out.len(), 3 * 257);
    // Heat kernel: variance 1 + tau at the centre.
    let centre = out.iter().find(|r| r[0] == 1.0 && r[1] == 0.0).unwrap();
    assert!((centre[2] - 1.0 / 2f64.sqrt()).abs() < 1e-3, "{centre:?}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), "# basis\norder = 3\nresolution = 8\n").unwrap();
    let report = ok(dir.path(), &["--config", "run.conf", "basis", "--order", "2"]);
    assert_eq!(report["config"]["order"], "2");
    assert_eq!(report["config"]["resolution"], "8");
    assert_eq!(report["results"]["order"], 2);
}

#[test]
fn validate_reports_suites() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(dir.path(), &["validate", "--suite", "filters"]);
    assert_eq!(report["results"]["passed"], true);
    let report = ok(dir.path(), &["validate", "--suite", "translation"]);
    assert_eq!(report["results"]["suites"][0]["suite"], "translation");
    let out = dlet(dir.path(), &["validate", "--suite", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn outputs_are_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["decompose", "--input", "gaussian_bump(8,1)", "--levels", "2"]);
    let run = || {
        let mut v = ok(
            dir.path(),
            &["--seed", "7", "variance", "--expansion", "expansion.json", "--taus", "0.1,0.3", "--nx", "17"],
        );
        v.as_object_mut().unwrap().remove("timing");
        v
    };
    assert_eq!(run(), run());
}
