//! End-to-end runs of the `habitopt` binary: exit codes, file formats and
//! determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn habitopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_habitopt")).args(args).env("HABITOPT_THREADS", "2").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, seed: &str, family: &str) {
    let out = habitopt(&["generate", "--seed", seed, "--family", family, "--out-dir", path(dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(a.path(), "17", "idiosyncratic");
    generate(b.path(), "17", "idiosyncratic");
    for name in ["model.json", "prefs.json", "endow.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let c = tempfile::tempdir().unwrap();
    generate(c.path(), "18", "idiosyncratic");
    assert_ne!(fs::read(a.path().join("model.json")).unwrap(), fs::read(c.path().join("model.json")).unwrap());
}

#[test]
fn validate_reports_class_and_rejects_arbitrage() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "5", "type-c");
    let report = dir.path().join("validate.json");
    let out = habitopt(&["validate", "--model", path(&dir.path().join("model.json")), "--out", path(&report)]);
    assert_eq!(code(&out), 0);
    let v = json(&report);
    assert_eq!(v["no_arbitrage"], true);
    assert_eq!(v["class"], "type_c");

    // The stock pays at least 1.5 for a price of 1 with a zero rate.
    let arb = dir.path().join("arb.json");
    fs::write(
        &arb,
        r#"{"tree": {"T": 1, "levels": [[[0, 1]], [[0], [1]]], "probs": [0.5, 0.5]},
            "n_assets": 1, "prices": [[[1.0]]], "dividends": [[[2.0, 1.5]]], "rates": [[0.0]]}"#,
    )
    .unwrap();
    let out = habitopt(&["validate", "--model", path(&arb)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("arbitrage"));
}

#[test]
fn malformed_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&habitopt(&["validate", "--model", path(&bad)])), 2);
    assert_eq!(code(&habitopt(&["solve", "--seed", "1", "--family", "no-such-family"])), 2);
    assert_eq!(code(&habitopt(&["sweep", "--seed", "1", "--range", "1:2"])), 2);
}

#[test]
fn solve_then_verify_first_order_conditions() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "9", "deterministic-incomplete");
    let (model, prefs, endow) = (dir.path().join("model.json"), dir.path().join("prefs.json"), dir.path().join("endow.json"));
    let sol = dir.path().join("solution.json");
    let out = habitopt(&["solve", "--model", path(&model), "--prefs", path(&prefs), "--endow", path(&endow), "--out", path(&sol)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = json(&sol);
    assert_eq!(s["negative_consumption"], false);
    assert!(s["diagnostics"]["foc_residuals"].as_array().unwrap().iter().all(|r| r.as_f64().unwrap() < 1e-8));

    let report = dir.path().join("report.json");
    let args = ["verify", "--model", path(&model), "--prefs", path(&prefs), "--endow", path(&endow)];
    let out = habitopt(&[&args[..], &["--solution", path(&sol), "--checks", "foc", "--report", path(&report)]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&report)["passed"], true);

    // The optimum for a heavier habit is feasible but not optimal here.
    let mut p = json(&prefs);
    let rows = p["beta"].as_array_mut().unwrap();
    for (k, row) in rows.iter_mut().enumerate().skip(1) {
        row.as_array_mut().unwrap()[k - 1] = Value::from(0.95);
    }
    let heavy = dir.path().join("heavy.json");
    fs::write(&heavy, serde_json::to_string(&p).unwrap()).unwrap();
    let other = dir.path().join("other.json");
    let out = habitopt(&["solve", "--model", path(&model), "--prefs", path(&heavy), "--endow", path(&endow), "--out", path(&other)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = habitopt(&[&args[..], &["--solution", path(&other), "--checks", "foc"]].concat());
    assert_eq!(code(&out), 4);
}

#[test]
fn full_verify_on_an_idiosyncratic_market() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = habitopt(&["verify", "--seed", "2", "--family", "idiosyncratic", "--report", path(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&report);
    assert_eq!(v["passed"], true);
}

#[test]
fn sweep_writes_one_row_per_endowment() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = habitopt(&["sweep", "--seed", "3", "--family", "bond-only", "--range", "1:3:5", "--out", path(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eps0,c0,dc0,d2c0,status,U_0,U_1,U_2");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(4) == Some("ok")));
}

#[test]
fn repro_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let lin = dir.path().join("lin.json");
    let out = habitopt(&["repro", "linearity", "--gamma", "1", "--r", "2", "--out", path(&lin)]);
    assert_eq!(code(&out), 0);
    let slope = json(&lin)["report"]["fit_slope"].as_f64().unwrap();
    assert!((slope - 0.5).abs() < 1e-10);

    let conv = dir.path().join("conv.json");
    assert_eq!(code(&habitopt(&["repro", "convexity", "--out", path(&conv)])), 0);
    let v = json(&conv);
    assert_eq!(v["convex"], true);
    assert_eq!(v["matches_corrected_form"], true);

    assert_eq!(code(&habitopt(&["repro", "no-such-scenario"])), 2);
}
