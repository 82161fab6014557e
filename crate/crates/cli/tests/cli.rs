use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ncdr_core::fixtures;
use ncdr_core::phasor::{analyze_active, passive_steady_state};
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn ncdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncdr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("ncdr runs")
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ncdr(&args)
}

fn ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) {
    let o = run(cmd, config, out, extra);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn five_mass_nominal_row() {
    let dir = TempDir::new().unwrap();
    ok("analyze", &fixture("five_mass_nominal.json"), dir.path(), &[]);
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["schema_version"], 1);
    assert!(rel(f(&r["W_max_J"]), 0.01115) < 1e-2);
    assert_eq!(r["W_max_link"], 1);
    assert!(rel(f(&r["P_max_W"]), 0.06067) < 1e-2);
    assert!(rel(f(&r["W_a_max_J"]), 0.00238) < 2e-2);
    assert!(rel(f(&r["feedback"]["g_N_per_m"]), -129.96) < 1e-3);
    assert!(rel(f(&r["feedback"]["tau_s"]), 0.04617) < 1e-3);
    assert!((f(&r["alpha_per_s"]) + 0.20926).abs() < 1e-3);
    assert!(f(&r["x_s_amplitude_m"]) < 1e-12);
}

#[test]
fn experimental_optimized_row() {
    let dir = TempDir::new().unwrap();
    ok("analyze", &fixture("experimental_optimized.json"), dir.path(), &[]);
    let r = json(&dir.path().join("report.json"));
    assert!(rel(f(&r["W_max_J"]), 0.00136) < 1e-2);
    assert!(rel(f(&r["P_max_W"]), 0.01855) < 1e-2);
    // the paper comparison for W_a lives in the acceptance suite
    let (m, a, e) = fixtures::experimental_optimized();
    assert_eq!(f(&r["W_a_max_J"]), analyze_active(&m, &a, &e).unwrap().energy.absorber.max);
    assert!(rel(f(&r["feedback"]["g_N_per_m"]), -170.99583) < 1e-3);
    assert!(rel(f(&r["feedback"]["tau_s"]), 0.01421) < 1e-3);
    assert!((f(&r["alpha_per_s"]) + 0.56855).abs() < 1e-3);
}

#[test]
fn optimized_five_mass_config_reports_its_objective() {
    let dir = TempDir::new().unwrap();
    ok("analyze", &fixture("five_mass_optimized.json"), dir.path(), &[]);
    let r = json(&dir.path().join("report.json"));
    let e = &r["design"]["evaluation"];
    assert!((f(&e["objective"]["J"]) - 0.111).abs() < 0.005);
    assert_eq!(r["design"]["feasible"], true);
}

#[test]
fn collocated_config_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let o = run("analyze", &fixture("experimental_nominal.json"), dir.path(), &["--override", "model.p=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-collocation"));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let o = run("tune", &fixture("experimental_nominal.json"), dir.path(), &["--override", "absorber.mass=0.3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
    let o = ncdr(&["tune", "--config", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_report_round_trips() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    ok("analyze", &fixture("five_mass_optimized.json"), &first, &["--override", "absorber.mass_kg=0.7"]);
    let report = json(&first.join("report.json"));
    let reingested = dir.path().join("reingested.json");
    fs::write(&reingested, serde_json::to_string(&report["config"]).unwrap()).unwrap();
    ok("analyze", &reingested, &second, &[]);
    assert_eq!(report, json(&second.join("report.json")));
    assert_eq!(f(&report["config"]["absorber"]["mass_kg"]), 0.7);
}

#[test]
fn tune_lists_candidates() {
    let dir = TempDir::new().unwrap();
    ok("tune", &fixture("experimental_nominal.json"), dir.path(), &[]);
    let r = json(&dir.path().join("tuning.json"));
    assert!(rel(f(&r["selected"]["g_N_per_m"]), -78.05282) < 1e-3);
    assert!(rel(f(&r["selected"]["tau_s"]), 0.03303) < 1e-3);
    assert_eq!(r["selected"]["branch"], "minus");
    assert!(rel(f(&r["Q_N_per_m"]["abs"]), 78.05282) < 1e-3);
    assert!(r["candidates"].as_array().unwrap().len() >= 2);
}

#[test]
fn spectrum_exports_roots() {
    let dir = TempDir::new().unwrap();
    let nominal = dir.path().join("nominal");
    ok("spectrum", &fixture("five_mass_nominal.json"), &nominal, &[]);
    let re = csv_column(&nominal.join("spectrum.csv"), "re_per_s");
    let rightmost = re.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((rightmost + 0.20926).abs() < 1e-3);
    let summary = json(&nominal.join("spectrum.json"));
    assert!(rel(f(&summary["alpha_per_s"]), rightmost) < 1e-9);
    assert!(csv_column(&nominal.join("spectrum.csv"), "residual").iter().all(|&r| r < 1e-8));

    let optimized = dir.path().join("optimized");
    ok("spectrum", &fixture("five_mass_optimized.json"), &optimized, &[]);
    let re = csv_column(&optimized.join("spectrum.csv"), "re_per_s");
    assert!(!re.is_empty());
    assert!(re.iter().all(|&r| r <= -0.22208 + 1e-3));
}

#[test]
fn passive_spectrum_has_all_finite_eigenvalues() {
    let dir = TempDir::new().unwrap();
    ok("spectrum", &fixture("five_mass_nominal.json"), dir.path(), &["--override", "feedback.mode=passive"]);
    let re = csv_column(&dir.path().join("spectrum.csv"), "re_per_s");
    assert_eq!(re.len(), 2 * 5 + 2);
    assert_eq!(json(&dir.path().join("spectrum.json"))["grid_size"], 0);
}

#[test]
fn simulated_target_is_suppressed_after_switch() {
    let dir = TempDir::new().unwrap();
    ok("simulate", &fixture("five_mass_nominal.json"), dir.path(), &["--override", "simulation.t_end_s=40"]);
    let path = dir.path().join("trajectory.csv");
    let t = csv_column(&path, "t_s");
    let x3 = csv_column(&path, "x3_m");
    let (m, a, e) = fixtures::five_mass_nominal();
    let passive = passive_steady_state(&m, &a, &e).unwrap().x[2].amplitude();
    let peak_after = |t0: f64| {
        t.iter()
            .zip(&x3)
            .filter(|(t, _)| **t > t0)
            .map(|(_, x)| x.abs())
            .fold(0.0, f64::max)
    };
    // the closed-loop abscissa -0.209 1/s bounds how fast the switch transient dies
    assert!(peak_after(25.0) < 0.05 * passive);
    assert!(peak_after(35.0) < 0.01 * passive);
    let summary = json(&dir.path().join("simulation.json"));
    assert_eq!(summary["samples"].as_u64().unwrap() as usize, t.len());
}

#[test]
fn passive_run_matches_phasor_amplitudes() {
    let dir = TempDir::new().unwrap();
    ok(
        "simulate",
        &fixture("experimental_nominal.json"),
        dir.path(),
        &["--override", "simulation.t_end_s=40", "--override", "simulation.switch_time_s=40"],
    );
    let summary = json(&dir.path().join("simulation.json"));
    let steady = summary["steady"].as_array().unwrap();
    let amp = |name: &str| f(&steady.iter().find(|m| m["name"] == name).unwrap()["amplitude"]);
    let (m, a, e) = fixtures::experimental_nominal();
    let oracle = passive_steady_state(&m, &a, &e).unwrap();
    for i in 0..3 {
        let want = oracle.x[i].amplitude();
        assert!(rel(amp(&format!("x{}_m", i + 1)), want) < 1e-3, "x{}", i + 1);
    }
    assert!(rel(amp("x_a_m"), oracle.x_a.amplitude()) < 1e-3);
}

#[test]
fn zero_excitation_gives_zero_columns() {
    let dir = TempDir::new().unwrap();
    ok(
        "simulate",
        &fixture("experimental_nominal.json"),
        dir.path(),
        &["--override", "excitation.amplitude_N=0", "--override", "simulation.t_end_s=3"],
    );
    let mut r = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    for rec in r.records() {
        let rec = rec.unwrap();
        for (h, v) in headers.iter().zip(rec.iter()).skip(1) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{h}");
        }
    }
}

#[test]
fn grid_optimization_writes_map_and_config() {
    let dir = TempDir::new().unwrap();
    ok("optimize", &fixture("experimental_grid.json"), dir.path(), &[]);
    let result = json(&dir.path().join("result.json"));
    assert_eq!(result["mode"], "grid");
    assert_eq!(result["point_count"], 17 * 21);
    let theta: Vec<f64> = result["best"]["theta"].as_array().unwrap().iter().map(f).collect();
    assert!((theta[1] - 0.705).abs() < 1e-12);
    let grid = dir.path().join("grid.csv");
    let j = csv_column(&grid, "J");
    assert_eq!(j.len(), 17 * 21);
    let mut r = csv::Reader::from_path(&grid).unwrap();
    let feasible: Vec<bool> = r.records().map(|rec| &rec.unwrap()[7] == "true").collect();
    let best = f(&result["best"]["objective"]["J"]);
    assert!(j.iter().zip(&feasible).filter(|(_, ok)| **ok).all(|(&v, _)| v >= best * (1.0 - 1e-9)));

    let again = dir.path().join("again");
    ok("analyze", &dir.path().join("optimized_config.json"), &again, &[]);
    let r = json(&again.join("report.json"));
    assert_eq!(f(&r["config"]["absorber"]["mass_kg"]), theta[0]);
    assert_eq!(f(&r["config"]["model"]["masses_kg"][2]), theta[1]);
    assert_eq!(r["design"]["feasible"], true);
    assert!(rel(f(&r["design"]["evaluation"]["objective"]["J"]), f(&result["best"]["objective"]["J"])) < 1e-12);
}

#[test]
fn continuous_optimization_logs_each_start() {
    let dir = TempDir::new().unwrap();
    let args = [
        "--seed",
        "7",
        "--override",
        "design.mode.starts=2",
        "--override",
        "design.mode.solver.max_iter=15",
    ];
    ok("optimize", &fixture("five_mass_optimize.json"), dir.path(), &args);
    let result = json(&dir.path().join("result.json"));
    assert_eq!(result["mode"], "continuous");
    assert_eq!(result["seed"], 7);
    assert_eq!(result["starts"].as_array().unwrap().len(), 2);
    assert!(result["best"]["slacks"]["alpha"].as_f64().unwrap() <= 0.0);
    let lines = fs::read_to_string(dir.path().join("starts.jsonl")).unwrap();
    let starts: Vec<Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(starts.len(), 2);
    assert!(starts.iter().all(|s| s["history"].is_array()));
    let optimized = json(&dir.path().join("optimized_config.json"));
    assert_eq!(optimized["design"]["normalization"]["mode"], "fixed");
}

#[test]
fn zero_starts_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let o = run(
        "optimize",
        &fixture("five_mass_optimize.json"),
        dir.path(),
        &["--override", "design.mode.starts=0"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_design_is_a_numerical_failure_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    let o = run(
        "optimize",
        &fixture("experimental_grid.json"),
        dir.path(),
        &["--override", "design.xi_alpha_per_s=-5"],
    );
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("alpha slack") && err.contains("W_a slack"), "{err}");
}
