use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fkbridge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fkbridge")).args(args).env_remove("FKBRIDGE_WORKERS").output().expect("binary runs")
}

fn fkbridge_with_workers(args: &[&str], workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fkbridge")).args(args).env("FKBRIDGE_WORKERS", workers).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn payload(dir: &Path) -> Value {
    let text = std::fs::read_to_string(dir.join("summary.json")).expect("summary written");
    let v: Value = serde_json::from_str(&text).unwrap();
    assert!(v.get("metadata").is_some());
    v["payload"].clone()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_gaussian_converges_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = fkbridge(&["solve", "--case", "gaussian", "--nx", "201", "--T", "1", "--tol", "1e-10", "--slices", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = payload(&out);
    assert!(p["residual"].as_f64().unwrap() <= 1e-10);
    assert!(out.join("slice_001.csv").exists() && out.join("f.csv").exists());

    // the echoed config reproduces the payload exactly
    let again = dir.path().join("again");
    let o = fkbridge(&["solve", "--config", s(&out.join("config.toml")), "--out", s(&again)]);
    assert_eq!(code(&o), 0);
    assert_eq!(payload(&again)["components"][0]["residual"], p["components"][0]["residual"]);
    assert_eq!(
        std::fs::read(out.join("slice_001.csv")).unwrap(),
        std::fs::read(again.join("slice_001.csv")).unwrap()
    );
}

#[test]
fn forced_non_convergence_exits_2_with_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g1");
    let o = fkbridge(&["solve", "--case", "gaussian", "--nx", "101", "--slices", "2", "--max-iter", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let p = payload(&out);
    assert_eq!(p["converged"], Value::Bool(false));
    assert!(p["residual"].as_f64().unwrap() > 1e-10);
}

#[test]
fn custom_marginal_files_solve() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = String::from("x,value\n");
    let mut b = String::from("x,value\n");
    for i in 0..161 {
        let x = -8.0 + 0.1 * i as f64;
        a.push_str(&format!("{x},{}\n", (-(x + 1.0) * (x + 1.0) / 2.0).exp()));
        b.push_str(&format!("{x},{}\n", (-(x - 1.0) * (x - 1.0) / 3.0).exp()));
    }
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    std::fs::write(&pa, a).unwrap();
    std::fs::write(&pb, b).unwrap();
    let out = dir.path().join("custom");
    let o = fkbridge(&["solve", "--rho0", s(&pa), "--rhoT", s(&pb), "--potential", "free", "--slices", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = fkbridge(&["solve", "--rho0", s(&dir.path().join("missing.csv")), "--rhoT", s(&pb), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn kernel_pde_writes_binary_and_ck_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    let o = fkbridge(&["kernel", "--potential", "harmonic", "--method", "pde", "--tau", "0.5", "--nx", "161", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(out.join("kernel.fkk")).unwrap();
    assert_eq!(&bytes[..4], b"FKK1");
    assert_eq!(bytes.len(), 4 + 5 * 8 + 161 * 161 * 8);
    assert!(payload(&out)["chapman_kolmogorov"]["residual"].as_f64().is_some());
}

#[test]
fn singular_pde_kernel_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = fkbridge(&["kernel", "--potential", "centrifugal", "--gamma", "1", "--method", "pde", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("domain splitting") && msg.contains("--method mc"), "{msg}");
}

#[test]
fn mc_kernel_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec!["kernel", "--potential", "free", "--method", "mc", "--paths", "20000", "--seed", "7", "--out"]
            .into_iter()
            .map(String::from)
            .chain([out.to_str().unwrap().to_string()])
            .collect::<Vec<_>>()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let aa = args(&a);
    let bb = args(&b);
    assert_eq!(code(&fkbridge_with_workers(&aa.iter().map(String::as_str).collect::<Vec<_>>(), "1")), 0);
    assert_eq!(code(&fkbridge_with_workers(&bb.iter().map(String::as_str).collect::<Vec<_>>(), "3")), 0);
    assert_eq!(std::fs::read(a.join("estimate.json")).unwrap(), std::fs::read(b.join("estimate.json")).unwrap());
    assert_eq!(payload(&a), payload(&b));
}

#[test]
fn simulate_from_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = fkbridge(&["solve", "--case", "gaussian", "--nx", "161", "--slices", "3", "--out", s(&run)]);
    assert_eq!(code(&o), 0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, w) in [(&a, "1"), (&b, "2")] {
        let o = fkbridge_with_workers(
            &["simulate", "--from-run", s(&run), "--paths", "4000", "--dt", "1e-3", "--seed", "42", "--out", s(out)],
            w,
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(a.join("summary.csv")).unwrap(), std::fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("ensemble.bin")).unwrap(), std::fs::read(b.join("ensemble.bin")).unwrap());
    assert_eq!(payload(&a), payload(&b));
    let var = payload(&a)["var_T"].as_f64().unwrap();
    assert!((var - 2.0).abs() < 0.15, "var(T) = {var}");
}

#[test]
fn simulate_without_source_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fkbridge(&["simulate", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    let o = fkbridge(&["simulate", "--from-run", s(&dir.path().join("nope")), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = fkbridge(&["validate", "--case", "stable_node", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"nodal_diagnostic"));
    let o = fkbridge(&["validate", "--case", "no_such_case", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn moments_command_reports_drift_and_diffusion() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = fkbridge(&["moments", "--case", "gaussian", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = payload(&out);
    let drift = p["estimates"]["drift_hat"].as_f64().unwrap();
    let diffusion = p["estimates"]["diffusion_hat"].as_f64().unwrap();
    assert!((drift + 1.0).abs() < 0.05 && (diffusion - 2.0).abs() < 0.1, "{p}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&fkbridge(&["--no-such-flag"])), 1);
    assert_eq!(code(&fkbridge(&["solve", "--nx", "many"])), 1);
    assert_eq!(code(&fkbridge(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[grid]\nunknown_key = 3\n").unwrap();
    assert_eq!(code(&fkbridge(&["solve", "--config", s(&bad), "--case", "gaussian"])), 1);
    assert_eq!(code(&fkbridge_with_workers(&["validate", "--case", "harmonic", "--out", s(dir.path())], "zero")), 1);
}
