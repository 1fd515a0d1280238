use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_markov-bsde"))
}

fn heat() -> Value {
    json!({
        "model": {"kind": "brownian_diffusion", "drift": {"offset": [0.0]}, "sigma": [1.0]},
        "clock": {"type": "identity", "horizon": 1.0, "steps": 10},
        "driver": {"name": "zero", "g": "x^2"},
        "solver": {"n_paths": 2000, "basis": {"family": "polynomial", "degree": 2}},
        "nodes": {"points": [[0.0, [0.0]], [0.5, [1.0]]]},
        "seed": 1
    })
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn minimal_heat_solve_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &heat());
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("s,x_1,u,v,stderr_u"));
    assert_eq!(csv.lines().count(), 3);
    let resolved: Value = serde_json::from_slice(&std::fs::read(out.join("resolved_config.json")).unwrap()).unwrap();
    // defaults are echoed
    assert_eq!(resolved["solver"]["max_iters"], 20);
    assert!(resolved["solver"]["lambda"].is_number());
    assert!(out.join("convergence.json").exists());
}

#[test]
fn forced_non_convergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = heat();
    v["driver"] = json!({"name": "sin_cos", "g": "x"});
    v["solver"]["max_iters"] = json!(1);
    let cfg = write_config(dir.path(), &v);
    let o = run("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_alpha_exits_one_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = heat();
    v["model"] = json!({"kind": "alpha_stable", "alpha": 2.5, "scale": 1.0});
    let cfg = write_config(dir.path(), &v);
    let o = run("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
}

#[test]
fn heat_oracle_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = heat();
    v["clock"]["steps"] = json!(20);
    v["solver"]["n_paths"] = json!(10_000);
    v["verify"] = json!({"oracle": {"kind": "heat_quadratic", "horizon": 1.0}});
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let o = run("verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!(out.join("residual.csv").exists());
}

#[test]
fn wrong_candidate_verify_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = heat();
    v["clock"]["steps"] = json!(20);
    v["solver"]["n_paths"] = json!(10_000);
    v["verify"] = json!({"oracle": {"kind": "heat_quadratic", "horizon": 1.0}, "shift": 0.5});
    let cfg = write_config(dir.path(), &v);
    assert_eq!(run("verify", &cfg, &dir.path().join("out"), &[]).status.code(), Some(2));

    // a formula candidate that is wrong everywhere
    v["verify"] = json!({"u": "x^2 + 2*(1 - t)"});
    let cfg = write_config(dir.path(), &v);
    assert_eq!(run("verify", &cfg, &dir.path().join("out2"), &[]).status.code(), Some(2));
}

#[test]
fn empty_node_list_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = heat();
    v["nodes"] = json!({"points": []});
    v["verify"] = json!({"oracle": {"kind": "heat_quadratic", "horizon": 1.0}});
    let cfg = write_config(dir.path(), &v);
    assert_eq!(run("verify", &cfg, &dir.path().join("out"), &[]).status.code(), Some(1));
    assert_eq!(run("solve", &cfg, &dir.path().join("out"), &[]).status.code(), Some(1));
}

#[test]
fn seed_and_paths_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &heat());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run("solve", &cfg, &a, &["--seed", "9", "--paths", "500"]);
    run("solve", &cfg, &b, &[]);
    let resolved: Value = serde_json::from_slice(&std::fs::read(a.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["solver"]["seed"], 9);
    assert_eq!(resolved["solver"]["n_paths"], 500);
    assert_ne!(
        std::fs::read(a.join("solution.csv")).unwrap(),
        std::fs::read(b.join("solution.csv")).unwrap()
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &heat());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run("solve", &cfg, &a, &["--threads", "2"]);
    run("solve", &cfg, &b, &["--threads", "3"]);
    assert_eq!(
        std::fs::read(a.join("solution.csv")).unwrap(),
        std::fs::read(b.join("solution.csv")).unwrap()
    );
}

fn write_measure(path: &Path, masses: &[f64]) {
    let mut text = String::from("cell_index,pos_mass,neg_mass\n");
    for (k, m) in masses.iter().enumerate() {
        text.push_str(&format!("{k},{},{}\n", m.max(0.0), (-m).max(0.0)));
    }
    std::fs::write(path, text).unwrap();
}

fn decompose(a: &Path, b: &Path, out: &Path) -> Output {
    bin().arg("decompose").arg(a).arg(b).arg("--out").arg(out).output().unwrap()
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn decompose_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let z = dir.path().join("zero.csv");
    let short = dir.path().join("short.csv");
    write_measure(&a, &[0.5, 1.0, 2.0, 0.25]);
    write_measure(&b, &[0.0, 2.0, 1.0, 3.0]);
    write_measure(&z, &[0.0; 4]);
    write_measure(&short, &[1.0; 3]);

    let out = dir.path().join("same");
    assert_eq!(decompose(&a, &a, &out).status.code(), Some(0));
    let rows = read_rows(&out.join("density.csv"));
    assert_eq!(
        std::fs::read_to_string(out.join("density.csv")).unwrap().lines().next(),
        Some("cell_index,density,indicator")
    );
    assert!(rows.iter().all(|r| r[1] == 1.0 && r[2] == 0.0));

    let out = dir.path().join("zero");
    assert_eq!(decompose(&a, &z, &out).status.code(), Some(0));
    assert!(read_rows(&out.join("density.csv")).iter().all(|r| r[2] == 1.0));

    let out = dir.path().join("mixed");
    assert_eq!(decompose(&a, &b, &out).status.code(), Some(0));
    let rows = read_rows(&out.join("density.csv"));
    assert_eq!(rows[0][2], 1.0);
    assert_eq!(rows[1][1], 0.5);
    assert!(out.join("singular.csv").exists());

    assert_eq!(decompose(&a, &short, &dir.path().join("bad")).status.code(), Some(1));
}

#[test]
fn gamma_check_tabulates() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = heat();
    v["gamma_check"] = json!({"functions": ["x", "x^2"]});
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let o = run("gamma-check", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("gamma.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let gamma = header.iter().position(|h| *h == "gamma").unwrap();
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // Γ(x, x) = σ² for Brownian motion
    assert!((first[gamma].parse::<f64>().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn unknown_subcommand_is_rejected() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_ne!(o.status.code(), Some(0));
}
