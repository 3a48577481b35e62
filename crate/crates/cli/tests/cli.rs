use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roughflow"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const NORMS: &str = r#"schema_version = 1
scenario = "norms"

[exponents]
d = 2
r = "inf"
q = "inf"
sigma = 1.0

[drift]
name = "zero"

[numerics]
dt = 0.01
n_paths = 10
seed = 4
lattice = { half_width = 1.0, per_axis = 3 }
"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_prints_all_scenarios_as_json() {
    let o = bin().arg("list").output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["norms", "kernel", "blocks", "flow", "moments", "khasminskii", "symplectic", "circulation", "grr"]);
    assert!(v.as_array().unwrap().iter().all(|e| e["anchor"].as_str().is_some_and(|a| !a.is_empty())));
}

#[test]
fn run_norms_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), NORMS);
    let out = dir.path().join("out");
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).args(["--seed", "9", "--workers", "1"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("PASS norm_finite"));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "scenario,estimand,params,estimate,std_error,n,seed,dt,n_paths,build_id");
    assert!(lines.next().unwrap().starts_with("norms,mixed_norm,,0,0,0,9,0.01,10,"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["passed"], true);
}

#[test]
fn env_var_sets_the_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), NORMS);
    let root = dir.path().join("root");
    let o = bin().args(["run", "--config"]).arg(&cfg).env("ROUGHFLOW_OUT", &root).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(root.join("norms-seed4").join("summary.json").exists());
}

#[test]
fn symplectic_example_reports_first_order_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let body = NORMS
        .replace("scenario = \"norms\"", "scenario = \"symplectic\"")
        .replace("name = \"zero\"", "name = \"hamiltonian\"\npotential = \"harmonic\"")
        .replace("dt = 0.01", "dt = 0.001");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let ratio = summary["headline"]["residual_ratio"].as_f64().unwrap();
    assert!((1.5..=2.5).contains(&ratio));
    assert!(out.join("plots.svg").exists());
}

#[test]
fn invalid_configs_exit_two_with_a_located_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &NORMS.replace("seed = 4", "seed = 4\nsead = 5"));
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sead") && err.contains("line"), "{err}");
    let cfg = write_config(dir.path(), &NORMS.replace("per_axis = 3", "per_axis = 1"));
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerics.lattice.per_axis"));
    let o = bin().args(["run", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["run"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let body = NORMS
        .replace("scenario = \"norms\"", "scenario = \"flow\"")
        .replace("name = \"zero\"", "name = \"linear\"\nmatrix = [400.0, 0.0, 0.0, 400.0]")
        .replace("n_paths = 10", "n_paths = 30\nt_final = 20.0");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(out.join("results.csv").exists());
}
