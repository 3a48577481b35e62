//! Configuration-driven scenarios with persisted, reproducible results.

mod config;
mod scenarios;
pub mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{emit_config, parse_config, ExperimentConfig, Format, LatticeSpec, Numerics, Outputs, Scenario, SCHEMA_VERSION};

use crate::error::{Error, Result};
use crate::estimators::EstimateReport;
use crate::flow::{write_dump, TrajectoryDump};
use svg::Plot;

/// Source revision the binary was built from, or `nogit`.
pub const BUILD_ID: &str = env!("ROUGHFLOW_BUILD_ID");

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ROUGHFLOW_OUT";

pub const CSV_HEADER: [&str; 10] = ["scenario", "estimand", "params", "estimate", "std_error", "n", "seed", "dt", "n_paths", "build_id"];

/// One estimand in `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub estimand: String,
    pub params: BTreeMap<String, f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

impl ResultRow {
    pub fn exact(estimand: &str, estimate: f64) -> Self {
        ResultRow { estimand: estimand.into(), params: BTreeMap::new(), estimate, std_error: 0.0, n: 0 }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    fn params_field(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

impl From<&EstimateReport> for ResultRow {
    fn from(r: &EstimateReport) -> Self {
        ResultRow { estimand: r.estimand.clone(), params: r.params.clone(), estimate: r.estimate, std_error: r.std_error, n: r.n_samples }
    }
}

/// Scenario-level pass/fail check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Everything a scenario produced, kept even when it stops early.
#[derive(Debug, Default)]
pub struct ScenarioOutput {
    pub rows: Vec<ResultRow>,
    pub checks: Vec<Check>,
    pub headline: BTreeMap<String, f64>,
    pub plots: Vec<Plot>,
    pub dump: Option<TrajectoryDump>,
}

impl ScenarioOutput {
    pub fn row(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.into(), passed, detail });
    }

    pub fn headline(&mut self, key: &str, value: f64) {
        self.headline.insert(key.into(), value);
    }
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub seed: u64,
    pub build_id: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub headline: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    /// 0 when every check passed, 1 on a failed check, 3 on a numeric failure.
    pub fn exit_code(&self) -> i32 {
        match (&self.summary.error, self.summary.passed) {
            (Some(_), _) => 3,
            (None, true) => 0,
            (None, false) => 1,
        }
    }
}

fn write_csv(path: &Path, cfg: &ExperimentConfig, rows: &[ResultRow]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            cfg.scenario.as_str().to_string(),
            r.estimand.clone(),
            r.params_field(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.n.to_string(),
            cfg.numerics.seed.to_string(),
            cfg.numerics.dt.to_string(),
            cfg.numerics.n_paths.to_string(),
            BUILD_ID.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the scenario on a worker pool sized by the config and writes the
/// requested artifacts into `out_dir`. Numeric failures are reported in the
/// summary with the partial results; only invalid configs and I/O errors
/// return `Err`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.numerics.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("numerics.workers: {e}")))?;
    let mut out = ScenarioOutput::default();
    let result = pool.install(|| scenarios::run_scenario(cfg, &mut out));
    let error = result.err().map(|e| e.to_string());
    let passed = error.is_none() && !out.checks.is_empty() && out.checks.iter().all(|c| c.passed);
    let summary = Summary {
        scenario: cfg.scenario,
        seed: cfg.numerics.seed,
        build_id: BUILD_ID.into(),
        passed,
        error,
        headline: out.headline,
        checks: out.checks,
        config: cfg.clone(),
    };
    let mut files = Vec::new();
    if cfg.wants(Format::Csv) {
        let p = out_dir.join("results.csv");
        write_csv(&p, cfg, &out.rows)?;
        files.push(p);
    }
    if cfg.wants(Format::Json) {
        let p = out_dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        std::fs::write(&p, text + "\n")?;
        files.push(p);
    }
    if cfg.outputs.plots && !out.plots.is_empty() {
        let p = out_dir.join("plots.svg");
        std::fs::write(&p, svg::render(&out.plots))?;
        files.push(p);
    }
    if let (true, Some(dump)) = (cfg.wants(Format::Dump), &out.dump) {
        let p = out_dir.join("trajectories.bin");
        write_dump(&p, dump)?;
        files.push(p);
    }
    Ok(RunOutcome { summary, files })
}

/// Catalog entry printed by `list`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub anchor: &'static str,
    pub description: &'static str,
    pub drift: &'static str,
    pub checks: Vec<&'static str>,
}

pub fn list_scenarios() -> Vec<ScenarioInfo> {
    Scenario::ALL
        .iter()
        .map(|&s| {
            let (anchor, description, drift, checks): (_, _, _, &[&str]) = match s {
                Scenario::Norms => (
                    "mixed space-time Lebesgue norm of the drift and the subcriticality exponents",
                    "Simpson quadrature of the mixed norm over the support (or the lattice box for unbounded fields).",
                    "any catalog field",
                    &["norm_finite", "matches_known_norm"],
                ),
                Scenario::Kernel => (
                    "Lebesgue norms of heat-kernel derivatives and their small-time scaling",
                    "Fitted log-log exponent of the conjugate-exponent kernel norm for derivative orders 0, 1, 2.",
                    "unused",
                    &["kernel_exponent_k0", "kernel_exponent_k1", "kernel_exponent_k2"],
                ),
                Scenario::Blocks => (
                    "Beta-Gamma simplex identity and time scaling of heat-kernel block integrals",
                    "Monte Carlo simplex identity over n <= 3 and exponents {0.5, 1, 2}; deterministic slope of a bounded block integral.",
                    "unused",
                    &["beta_identity", "block_slope"],
                ),
                Scenario::Flow => (
                    "variational equation of the Jacobian flow, volume preservation and the Girsanov weight",
                    "Ensemble with Jacobians; finite-difference check, determinant check for divergence-free drifts, Girsanov mean for bounded drifts.",
                    "fields with an analytic gradient",
                    &["jacobian_vs_finite_differences", "volume_preserved", "girsanov_mean"],
                ),
                Scenario::Moments => (
                    "moment and tail bounds of the Jacobian flow and modulus of continuity of the flow map",
                    "Moments of order 1, 2, 4, survival curve diagnostics and modulus scaling over the lattice.",
                    "fields with an analytic gradient",
                    &["moments_finite", "no_blowup"],
                ),
                Scenario::Khasminskii => (
                    "exponential moments of the drift energy along Brownian paths",
                    "Exponential and first-moment functionals at the origin and the small-time scaling of the first moment.",
                    "any catalog field",
                    &["jensen", "exponential_finite"],
                ),
                Scenario::Symplectic => (
                    "symplecticity of stochastic Hamiltonian flows",
                    "Symplectic defect at dt and dt/2 on common noise and a gradient-flow control.",
                    "hamiltonian",
                    &["first_order_ratio", "control_separation"],
                ),
                Scenario::Circulation => (
                    "martingale property of the Kelvin circulation and of vorticity along particle paths",
                    "Zero-mean-increment tests for circulation and vorticity of the backward Taylor-Green vortex, plus planted-drift power.",
                    "taylor_green_backward",
                    &["circulation_martingale", "vorticity_martingale", "planted_power"],
                ),
                Scenario::Grr => (
                    "Garsia-Rodemich-Rumsey bound for the space-time modulus of the flow",
                    "Both sides of the inequality per path with a constant fitted on an independent calibration seed.",
                    "any catalog field",
                    &["grr_holds"],
                ),
            };
            ScenarioInfo { name: s.as_str(), anchor, description, drift, checks: checks.to_vec() }
        })
        .collect()
}

pub fn list_scenarios_json() -> String {
    serde_json::to_string_pretty(&list_scenarios()).expect("catalog serializes")
}
