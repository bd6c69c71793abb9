use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modeq"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"))
}

fn write_config(dir: &tempfile::TempDir, name: &str, v: &Value) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn deterministic_quadratic(n: usize) -> Value {
    json!({
        "problem": {"kind": "quadratic", "diag": [1.0, 1.0]},
        "scheme": {"h": 0.1, "N": n, "x0": [1.0, -2.0]}
    })
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn run_deterministic_path_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "c.json", &deterministic_quadratic(10));
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 11);
    let last = &r[10];
    let x1: f64 = last[2].parse().unwrap();
    let x2: f64 = last[3].parse().unwrap();
    assert!((x1 - 0.9f64.powi(10)).abs() < 1e-15);
    assert!((x2 + 2.0 * 0.9f64.powi(10)).abs() < 1e-15);
}

#[test]
fn run_with_zero_steps_emits_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "c.json", &deterministic_quadratic(0));
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][2].parse::<f64>().unwrap(), 1.0);
    assert_eq!(r[0][3].parse::<f64>().unwrap(), -2.0);
}

#[test]
fn ensemble_output_is_reproducible_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "c.json",
        &json!({
            "problem": {"kind": "perturbed_quadratic", "dim": 2, "epsilon": 0.5},
            "diffusion": {"envelope": {"kind": "constant", "c": 1.0}, "shape": "state_scaled", "state_gain": 0.5},
            "scheme": {"h": 0.05, "T": 1.0, "M": 3000, "seed": 9, "x0": [1.0, 1.0]}
        }),
    );
    let c = cfg.to_str().unwrap();
    let a = run(&["--threads", "1", "run", "--config", c]);
    let b = run(&["--threads", "8", "run", "--config", c]);
    let e = bin().env("MODEQ_THREADS", "3").args(["run", "--config", c]).output().unwrap();
    assert!(a.status.success() && b.status.success() && e.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, e.stdout);
    let seeded = run(&["run", "--config", c, "--seed", "10"]);
    assert_ne!(a.stdout, seeded.stdout);
}

#[test]
fn output_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "c.json", &deterministic_quadratic(10));
    let out = dir.path().join("out.csv");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--set", "scheme.N=3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(rows(&text).len(), 4);
    assert!(!text.contains('\r'));
}

#[test]
fn sweep_csv_round_trips_floats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "c.json",
        &json!({
            "problem": {"kind": "quadratic", "diag": [1.0, 2.0]},
            "diffusion": {"envelope": {"kind": "exponential", "c": 1.0, "nu": 1.0}, "shape": "scalar_identity"},
            "scheme": {"h_grid": [0.2, 0.1, 0.05], "T": 2.0, "M": 2000, "seed": 4, "x0": [0.5, 0.5]},
            "sweep": {"target": "vs_ode"}
        }),
    );
    let o = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("target,phi,h,N,T,M,estimate,std_error,coupled,seed\n"));
    assert!(text.contains("# slope = "));
    for r in rows(&text) {
        for col in [2, 4, 6, 7] {
            let v: f64 = r[col].parse().unwrap();
            assert_eq!(format!("{v:.16e}"), r[col]);
        }
    }
}

#[test]
fn sweep_with_single_step_size_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "c.json",
        &json!({
            "problem": {"kind": "quadratic", "diag": [1.0]},
            "scheme": {"h_grid": [0.1], "T": 1.0, "M": 100, "x0": [1.0]},
            "sweep": {"target": "vs_ode"}
        }),
    );
    let o = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("degenerate order fit"), "{}", stderr(&o));
}

#[test]
fn blow_up_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "c.json",
        &json!({
            "problem": {"kind": "quadratic", "diag": [1.0]},
            "scheme": {"h": 3.0, "N": 5000, "x0": [1.0]}
        }),
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(&dir, "empty.json", &json!({}));
    for cmd in ["run", "sweep", "check", "validate-plan"] {
        assert_eq!(run(&[cmd, "--config", empty.to_str().unwrap()]).status.code(), Some(2), "{cmd}");
    }
    let mut bad = deterministic_quadratic(3);
    bad["scheme"]["typo"] = json!(1);
    let bad = write_config(&dir, "bad.json", &bad);
    assert_eq!(run(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["run"]).status.code(), Some(2));
    assert_eq!(run(&["run", "--config", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn plan_worked_example() {
    let o = run(&["plan", "--regime", "first-weak", "--eps", "0.01"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][3], "461");
    assert_eq!(r[0][4], "N_1w");
}

#[test]
fn plan_compare_threshold_verdict() {
    let o = run(&["plan", "--regime", "second-weak-poly", "--alpha", "1.5", "--eps", "0.01", "--compare"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().nth(1).unwrap().ends_with(",no reduction"), "{text}");
    let o = run(&["plan", "--regime", "second-weak-poly", "--alpha", "1.6", "--eps", "0.01", "--compare"]);
    assert!(stdout(&o).lines().nth(1).unwrap().ends_with(",reduction"));
}

#[test]
fn plan_rejects_out_of_range_tolerance() {
    assert_eq!(run(&["plan", "--regime", "first-weak", "--eps", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["plan", "--regime", "second-weak-poly", "--eps", "0.1"]).status.code(), Some(2));
    assert_eq!(run(&["plan", "--regime", "first-weak"]).status.code(), Some(2));
}

#[test]
fn complexity_table_config() {
    let o = run(&["plan", "--config", bundled("complexity_table").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let at = |decay: &str| -> Vec<String> {
        rows(&text).into_iter().find(|r| r[0].parse::<f64>().unwrap() == 0.01 && r[1].starts_with(decay)).unwrap()
    };
    assert_eq!(at("bounded")[2], "461");
    assert_eq!(at("exponential")[4], "47");
    assert_eq!(at("polynomial")[4], "57");
}

fn check_table(o: &Output) -> Vec<(String, bool)> {
    let r = rows(&stdout(o));
    assert!(r.iter().all(|row| row.len() == 4), "{r:?}");
    r.into_iter().map(|row| (row[0].clone(), row[3] == "true")).collect()
}

#[test]
fn check_passes_on_default_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "c.json",
        &json!({
            "problem": {"kind": "quadratic", "diag": [1.0, 3.0]},
            "diffusion": {"envelope": {"kind": "constant", "c": 1.0}, "shape": "scalar_identity"},
            "check": {"samples": 500, "h_grid": [0.1], "tangent_ensemble": 200}
        }),
    );
    let o = run(&["check", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = check_table(&o);
    assert!(t.len() > 10);
    assert!(t.iter().all(|(_, ok)| *ok), "{t:?}");
}

#[test]
fn check_reports_violated_convexity_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "c.json",
        &json!({
            "problem": {"kind": "perturbed_quadratic", "dim": 2, "epsilon": 100.0},
            "check": {"samples": 300, "horizons": [0.5], "tangent_ensemble": 10}
        }),
    );
    let o = run(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = check_table(&o);
    assert!(t.iter().any(|(n, ok)| n == "mu_convexity" && !ok), "{t:?}");
}

#[test]
fn validate_plan_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "c.json",
        &json!({
            "problem": {"kind": "quadratic", "diag": [1.0]},
            "phi": {"kind": "smooth_bounded"},
            "scheme": {"M": 100, "x0": [1.0]},
            "validate": {"regime": "first-weak", "epsilons": [0.5, 0.04, 0.02, 0.01]}
        }),
    );
    let o = run(&["validate-plan", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 4);
    assert!(r.iter().all(|row| row[9] == "true"), "{r:?}");
}

#[test]
fn bundled_configs_parse() {
    for name in ["theorem1_order", "theorem2_order", "corollary1_strong", "prop62_contraction"] {
        let text = std::fs::read_to_string(bundled(name)).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert!(v.get("problem").is_some(), "{name}");
    }
}

#[test]
fn theorem1_order_config_reproduces_first_order() {
    let o = run(&["sweep", "--config", bundled("theorem1_order").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let slope: f64 = text.lines().find_map(|l| l.strip_prefix("# slope = ")).unwrap().parse().unwrap();
    let r2: f64 = text.lines().find_map(|l| l.strip_prefix("# r_squared = ")).unwrap().parse().unwrap();
    assert!((0.85..=1.15).contains(&slope) && r2 >= 0.98, "slope {slope}, R² {r2}");
}

#[test]
fn corollary1_strong_config_matches_plateau() {
    let o = run(&["run", "--config", bundled("corollary1_strong").to_str().unwrap()]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    let rms = r.iter().find(|row| row[0] == "strong_rms").unwrap();
    let (v, se): (f64, f64) = (rms[1].parse().unwrap(), rms[2].parse().unwrap());
    assert!((v - (0.01f64 / 0.19).sqrt()).abs() <= 4.0 * se, "{v} ± {se}");
}

#[test]
fn theorem2_order_config_reproduces_second_order() {
    let o = run(&["sweep", "--config", bundled("theorem2_order").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let slope: f64 = text.lines().find_map(|l| l.strip_prefix("# slope = ")).unwrap().parse().unwrap();
    assert!((1.6..=2.4).contains(&slope), "slope {slope}");
    assert!(rows(&text).iter().all(|r| r[8] == "true"));
}

#[test]
fn prop62_contraction_config_passes_every_check() {
    let o = run(&["check", "--config", bundled("prop62_contraction").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = check_table(&o);
    assert!(t.iter().filter(|(n, _)| n.starts_with("sde_contraction")).count() == 16);
    assert!(t.iter().all(|(_, ok)| *ok), "{t:?}");
}
