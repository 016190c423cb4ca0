use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const FAST: &str = r#""mc":{"n_paths":600},"checks":{"viscosity":true,"laplace":false}"#;

#[test]
fn interval_rbm_passes_and_writes_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &format!(r#"{{"scenario":"interval_rbm","h":"cos_pi",{FAST}}}"#));
    let out = tmp.path().join("out");
    let o = lab(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("interval_rbm: mechanism holds"));
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["pass"], true);
    let rows = s["pde_vs_mc"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r["gap"].as_f64().unwrap().abs() <= r["tolerance"].as_f64().unwrap());
    }
    assert!(out.join("lambda_sweep.csv").exists());
    let grid = std::fs::read_to_string(out.join("u_grid.csv")).unwrap();
    assert!(grid.starts_with("lambda,i1,x1,u\n"), "{}", &grid[..40]);
    assert!(!out.join("paths.csv").exists());
}

#[test]
fn manufactured_ou_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"scenario":"ou_1d","checks":{"viscosity":false,"laplace":false}}"#);
    let out = tmp.path().join("out");
    let o = lab(&["run", &cfg, "--out", out.to_str().unwrap(), "--paths", "600"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn negative_lambda_is_a_configuration_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"scenario":"interval_rbm","lambdas":[-1.0]}"#);
    let o = lab(&["run", &cfg, "--out", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("validate"));
    assert_eq!(lab(&["validate", &cfg]).status.code(), Some(2));
}

#[test]
fn validate_accepts_good_and_rejects_bad_files() {
    let tmp = TempDir::new().unwrap();
    let good = write_config(tmp.path(), "g.json", r#"{"scenario":"disk_tangential","lambdas":[0.5,1.0]}"#);
    let o = lab(&["validate", &good]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("disk_tangential"));
    let unknown = write_config(tmp.path(), "u.json", r#"{"scenario":"nope"}"#);
    assert_eq!(lab(&["validate", &unknown]).status.code(), Some(2));
    let broken = write_config(tmp.path(), "b.json", "{");
    assert_eq!(lab(&["validate", &broken]).status.code(), Some(2));
    let missing = tmp.path().join("missing.json");
    assert_eq!(lab(&["validate", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn list_names_the_presets() {
    let o = lab(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("disk_tangential"));
    assert!(s.contains("jump_alpha"));
    assert_eq!(s.lines().count(), 7);
}

#[test]
fn mismatched_payoff_exits_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"scenario":"interval_rbm","h_mc":"tanh","mc":{"n_paths":600},"checks":{"viscosity":false,"laplace":false}}"#,
    );
    let o = lab(&["run", &cfg, "--out", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("mechanism violated"));
    let s = read_json(&tmp.path().join("out/summary.json"));
    assert_eq!(s["pass"], false);
    assert_eq!(s["roundtrip"]["verdict"], "mechanism violated");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"scenario":"halfline_rbm","lambdas":[1.0,2.0],"mc":{"n_paths":400,"export_paths":3},"checks":{"viscosity":false}}"#,
    );
    let dirs: Vec<_> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    for d in &dirs {
        let o = lab(&["run", &cfg, "--out", d.to_str().unwrap(), "--seed", "9"]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    }
    for f in ["lambda_sweep.csv", "u_grid.csv", "paths.csv"] {
        let a = std::fs::read(dirs[0].join(f)).unwrap();
        let b = std::fs::read(dirs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let mut sa = read_json(&dirs[0].join("summary.json"));
    let mut sb = read_json(&dirs[1].join("summary.json"));
    sa["timestamp"] = 0.into();
    sb["timestamp"] = 0.into();
    assert_eq!(sa, sb);

    let c = tmp.path().join("c");
    lab(&["run", &cfg, "--out", c.to_str().unwrap(), "--seed", "10"]);
    assert_ne!(std::fs::read(dirs[0].join("lambda_sweep.csv")).unwrap(), std::fs::read(c.join("lambda_sweep.csv")).unwrap());
}
