//! Every scenario end to end on small configurations.

use std::path::Path;

use roughflow::experiment::{parse_config, run, RunOutcome, Scenario};

fn config(scenario: &str, drift: &str, d: usize, sigma: f64, numerics: &str) -> String {
    format!(
        "schema_version = 1\nscenario = \"{scenario}\"\n\n[exponents]\nd = {d}\nr = \"inf\"\nq = \"inf\"\nsigma = {sigma}\n\n[drift]\n{drift}\n\n[numerics]\n{numerics}\n"
    )
}

fn run_in(text: &str, dir: &Path) -> RunOutcome {
    let cfg = parse_config(text).unwrap();
    run(&cfg, dir).unwrap()
}

fn assert_passes(o: &RunOutcome) {
    assert!(o.summary.error.is_none(), "{:?}", o.summary.error);
    for c in &o.summary.checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    assert_eq!(o.exit_code(), 0);
}

const SMALL: &str = "dt = 0.01\nn_paths = 40\nseed = 3\nlattice = { half_width = 1.0, per_axis = 5 }";

#[test]
fn norms_of_the_zero_field_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(&config("norms", "name = \"zero\"", 2, 1.0, SMALL), dir.path());
    assert_passes(&o);
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("norms,mixed_norm,")).unwrap();
    assert_eq!(row.split(',').nth(3), Some("0"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["headline"]["mixed_norm"], 0.0);
    assert_eq!(json["config"]["scenario"], "norms");
}

#[test]
fn norms_of_a_bump_and_kernel_scaling() {
    let dir = tempfile::tempdir().unwrap();
    assert_passes(&run_in(&config("norms", "name = \"smooth_bump\"", 1, 1.0, SMALL), dir.path()));
    let o = run_in(&config("kernel", "name = \"zero\"", 1, 1.0, SMALL), dir.path());
    assert_passes(&o);
    assert_eq!(o.summary.checks.len(), 3);
    assert!(dir.path().join("plots.svg").exists());
}

#[test]
fn blocks_suite_meets_the_gamma_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let numerics = "dt = 0.01\nt_final = 1.5\nn_paths = 40\nseed = 3\nmc_samples = 200000\nlattice = { half_width = 1.0, per_axis = 5 }";
    let o = run_in(&config("blocks", "name = \"zero\"", 1, 1.0, numerics), dir.path());
    assert_passes(&o);
    assert!(o.summary.headline["max_relative_error"] < 0.01);
    let rows = std::fs::read_to_string(dir.path().join("results.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 117 + 1);
}

#[test]
fn flow_with_dump_and_volume_checks() {
    let dir = tempfile::tempdir().unwrap();
    let numerics = "dt = 1e-3\nn_paths = 40\nseed = 5\nlattice = { half_width = 1.0, per_axis = 3 }";
    let text = config("flow", "name = \"hamiltonian\"\npotential = \"gaussian_well\"", 2, 0.5, numerics)
        + "\n[outputs]\nformats = [\"csv\", \"json\", \"dump\"]\n";
    let o = run_in(&text, dir.path());
    assert_passes(&o);
    let names: Vec<&str> = o.summary.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["jacobian_vs_finite_differences", "volume_preserved", "girsanov_mean"]);
    let dump = roughflow::flow::read_dump(&dir.path().join("trajectories.bin")).unwrap();
    assert_eq!(dump.d, 2);
    assert_eq!(dump.n_rows(), 40 * 11 * 9);
    let o = run_in(&config("flow", "name = \"smooth_bump\"", 2, 1.0, numerics), dir.path());
    assert_passes(&o);
}

#[test]
fn moments_and_khasminskii() {
    let dir = tempfile::tempdir().unwrap();
    let numerics = "dt = 0.01\nn_paths = 60\nseed = 5\nlattice = { half_width = 1.0, per_axis = 17 }";
    let o = run_in(&config("moments", "name = \"smooth_bump\"", 1, 1.0, numerics), dir.path());
    assert_passes(&o);
    assert!(o.summary.headline.contains_key("modulus_slope"));
    let o = run_in(&config("khasminskii", "name = \"smooth_bump\"", 2, 1.0, SMALL), dir.path());
    assert_passes(&o);
    assert!(o.summary.headline["first_moment_slope"] > 0.5);
}

#[test]
fn symplectic_harmonic_oscillator_is_first_order() {
    let dir = tempfile::tempdir().unwrap();
    let numerics = "dt = 1e-3\nn_paths = 20\nseed = 7\nlattice = { half_width = 1.0, per_axis = 3 }";
    let o = run_in(&config("symplectic", "name = \"hamiltonian\"\npotential = \"harmonic\"", 2, 0.5, numerics), dir.path());
    assert_passes(&o);
    let ratio = o.summary.headline["residual_ratio"];
    assert!((1.5..=2.5).contains(&ratio), "{ratio}");
}

#[test]
fn grr_scenario_holds() {
    let dir = tempfile::tempdir().unwrap();
    let numerics = "dt = 1e-3\nn_paths = 50\nseed = 9\nlattice = { half_width = 1.0, per_axis = 9 }";
    assert_passes(&run_in(&config("grr", "name = \"smooth_bump\"", 1, 1.0, numerics), dir.path()));
}

#[test]
fn circulation_scenario_small() {
    let dir = tempfile::tempdir().unwrap();
    let numerics = "dt = 0.01\nn_paths = 10000\nseed = 11\nlattice = { half_width = 1.0, per_axis = 9 }";
    let o = run_in(&config("circulation", "name = \"taylor_green_backward\"\nnu = 0.125", 2, 0.5, numerics), dir.path());
    assert_passes(&o);
    assert_eq!(o.summary.scenario, Scenario::Circulation);
}

#[test]
fn results_are_identical_across_runs_and_worker_counts() {
    let numerics = |w: usize| format!("dt = 0.01\nn_paths = 40\nseed = 3\nworkers = {w}\nlattice = {{ half_width = 1.0, per_axis = 3 }}");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_in(&config("moments", "name = \"smooth_bump\"", 2, 1.0, &numerics(1)), a.path());
    run_in(&config("moments", "name = \"smooth_bump\"", 2, 1.0, &numerics(3)), b.path());
    let ra = std::fs::read(a.path().join("results.csv")).unwrap();
    let rb = std::fs::read(b.path().join("results.csv")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn numeric_failure_keeps_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    // a stiff linear drift overflows inside the Jacobian check after the main ensemble was recorded
    let text = config(
        "flow",
        "name = \"linear\"\nmatrix = [400.0, 0.0, 0.0, 400.0]",
        2,
        1.0,
        "dt = 0.01\nt_final = 20.0\nn_paths = 30\nseed = 1\nlattice = { half_width = 1.0, per_axis = 2 }",
    );
    let o = run_in(&text, dir.path());
    assert_eq!(o.exit_code(), 3, "{:?}", o.summary);
    assert!(o.summary.error.is_some());
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.contains("flagged_paths"));
}
