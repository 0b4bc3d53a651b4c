use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evospace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evospace"))
        .args(args)
        .env("EVOSPACE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Points on a circle with a linear response.
fn write_dataset(dir: &Path) {
    let mut text = String::from("x0,x1,y\n");
    for i in 0..40 {
        let a = i as f64 * 0.157;
        let (x, y) = (a.cos() * 0.8, a.sin() * 0.6);
        text.push_str(&format!("{x},{y},{}\n", 0.5 * x - 0.3 * y));
    }
    fs::write(dir.join("points.csv"), text).unwrap();
}

fn write_config(dir: &Path, extra_schedule: &str, model_extra: &str, target: &str) -> String {
    write_dataset(dir);
    let cfg = format!(
        r#"[model]
dataset = "points.csv"
response_columns = 1
panel = {{ kind = "data_columns", columns = [0, 1] }}
generator = {{ kind = "squared_euclidean" }}
target = {target}
{model_extra}

[mutation]
kind = "orthonormal"

[schedule]
epsilon = 0.1
c_t = 0.001
{extra_schedule}

[run]
steps = 200
policy = "strict"
seeds = [7]
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, cfg).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn oracle_pdg_agrees() {
    let o = evospace(&["oracle", "pdg", "--dg", "5", "--z", "0.3"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("equal true"), "{s}");
    let closed = 0.3f64.powi(4) * (5.0 - 4.0 * 0.3);
    assert!(s.contains(&format!("closed {closed}")) || s.contains("closed 0.0307"), "{s}");
}

#[test]
fn oracle_derangement_value() {
    let o = evospace(&["oracle", "derangement", "--j", "6"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("enumeration -5") && s.contains("determinant -5"), "{s}");
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(evospace(&["fly"]).status.code(), Some(64));
    assert_eq!(evospace(&["oracle", "pdg", "--dg", "2", "--z", "0.1", "--bogus"]).status.code(), Some(64));
    assert_eq!(evospace(&["--help"]).status.code(), Some(0));
}

#[test]
fn diagnose_schedule_reports_every_quantity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "", r#"{ kind = "response" }"#);
    let o = evospace(&["diagnose", "schedule", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in ["u", "v", "alpha", "tol", "tau", "m", "t", "horizon"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["alpha"].as_f64().unwrap() > 0.0);
}

#[test]
fn diagnose_basis_and_exen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "start = [0.5, 0.5]", r#"{ kind = "response" }"#);
    let o = evospace(&["diagnose", "basis", "--config", &cfg]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["quality"]["bbar"].as_f64(), Some(1.0));
    let o = evospace(&["diagnose", "exen", "--config", &cfg]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["rho"].as_f64().unwrap() > 0.0);
}

#[test]
fn evolve_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "", r#"{ kind = "response" }"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = evospace(&["evolve", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = fs::read(a.join("trace_7.jsonl")).unwrap();
    assert_eq!(ta, fs::read(b.join("trace_7.jsonl")).unwrap());
    assert_eq!(ta.iter().filter(|c| **c == b'\n').count(), 200);
    let fin: serde_json::Value = serde_json::from_slice(&fs::read(a.join("final_7.json")).unwrap()).unwrap();
    assert_eq!(fin["coords"].as_array().unwrap().len(), 2);
    assert_eq!(fin["failed"], false);
}

#[test]
fn evolve_csv_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "", r#"{ kind = "response" }"#);
    let out = dir.path().join("o");
    let o = evospace(&["evolve", "--config", &cfg, "--seeds", "1,2", "--out", out.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("trace_2.csv")).unwrap();
    assert!(text.starts_with("step,"));
}

#[test]
fn strict_failure_exits_3() {
    // organism already at the target; with these knobs every mutant loses
    // alpha^2 = z_alpha^2 eps^2 / (4 U^2) > tol = z_tol eps^2 / (2 U^2)
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "knobs = { z_tau = 0.01, z_alpha = 0.5, z_tol = 0.1 }",
        "start = [0.3, -0.2]",
        r#"{ kind = "coords", coords = [0.3, -0.2] }"#,
    );
    let text = fs::read_to_string(&cfg).unwrap().replace(
        r#"panel = { kind = "data_columns", columns = [0, 1] }"#,
        r#"panel = { kind = "identity", d = 2 }"#,
    );
    fs::write(&cfg, text).unwrap();
    let o = evospace(&["evolve", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nnonsense = 1\n").unwrap();
    assert_eq!(evospace(&["diagnose", "schedule", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(evospace(&["evolve", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "knobs = { z_tau = 0.9, z_alpha = 0.9, z_tol = 0.9 }", "", r#"{ kind = "response" }"#);
    assert_eq!(evospace(&["diagnose", "schedule", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn frontier_sweep_csv() {
    let o = evospace(&["frontier", "sweep", "--delta", "1,-1", "--gamma", "1,0;0,1", "--n", "1", "--alpha", "1", "--levels", "1,2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    let mut lines = s.lines();
    assert_eq!(lines.next(), Some("premium,r_minus,r_plus"));
    // zero-sum delta: the frontier is symmetric about zero
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] + v[2]).abs() < 1e-12);
    }
}

#[test]
fn experiment_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = evospace(&["experiment", "--scenario", "unsupervised-mean", "--seeds", "0..2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["seeds"], 2);
    assert!(out.join("report.json").exists());
    assert!(out.join("trace_main_1.jsonl").exists());
    assert!(out.join("path_main_0.csv").exists());
}
