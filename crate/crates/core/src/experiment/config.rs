//! Typed experiment configuration stored as TOML.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::drift::{DriftField, DriftSpec};
use crate::error::{Error, Result};
use crate::exponents::Exponents;
use crate::forms::MIN_PATHS;

pub const SCHEMA_VERSION: u32 = 1;

/// Test times used by the circulation scenario.
pub const CIRCULATION_TESTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Norms,
    Kernel,
    Blocks,
    Flow,
    Moments,
    Khasminskii,
    Symplectic,
    Circulation,
    Grr,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Norms,
        Scenario::Kernel,
        Scenario::Blocks,
        Scenario::Flow,
        Scenario::Moments,
        Scenario::Khasminskii,
        Scenario::Symplectic,
        Scenario::Circulation,
        Scenario::Grr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Norms => "norms",
            Scenario::Kernel => "kernel",
            Scenario::Blocks => "blocks",
            Scenario::Flow => "flow",
            Scenario::Moments => "moments",
            Scenario::Khasminskii => "khasminskii",
            Scenario::Symplectic => "symplectic",
            Scenario::Circulation => "circulation",
            Scenario::Grr => "grr",
        }
    }
}

/// Regular lattice on the centred cube `[-half_width, half_width]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub half_width: f64,
    pub per_axis: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt: f64,
    #[serde(default = "one")]
    pub t_final: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    pub lattice: LatticeSpec,
    /// Exponential rate for the Khasminskii functional.
    #[serde(default = "one")]
    pub lambda: f64,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn default_mc_samples() -> usize {
    100_000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    /// Binary trajectory dump, for scenarios that simulate a flow.
    Dump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default = "yes")]
    pub plots: bool,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

fn yes() -> bool {
    true
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { directory: None, formats: default_formats(), plots: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub exponents: Exponents,
    pub drift: DriftSpec,
    pub numerics: Numerics,
    #[serde(default)]
    pub outputs: Outputs,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Number of fine steps up to `t_final`.
    pub fn n_steps(&self) -> usize {
        (self.numerics.t_final / self.numerics.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.numerics;
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, found {}", self.schema_version)));
        }
        if !(n.dt > 0.0 && n.dt.is_finite()) {
            return Err(invalid("numerics.dt", "must be positive"));
        }
        if !(n.t_final > 0.0 && n.t_final.is_finite()) {
            return Err(invalid("numerics.t_final", "must be positive"));
        }
        let steps = n.t_final / n.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return Err(invalid("numerics.dt", "must divide t_final into a whole number of steps"));
        }
        if n.n_paths == 0 {
            return Err(invalid("numerics.n_paths", "must be at least 1"));
        }
        if n.seed > i64::MAX as u64 {
            return Err(invalid("numerics.seed", "must fit in a signed 64-bit integer"));
        }
        if n.mc_samples == 0 {
            return Err(invalid("numerics.mc_samples", "must be at least 1"));
        }
        if !(n.lattice.half_width > 0.0 && n.lattice.half_width.is_finite()) {
            return Err(invalid("numerics.lattice.half_width", "must be positive"));
        }
        if n.lattice.per_axis < 2 {
            return Err(invalid("numerics.lattice.per_axis", "must be at least 2"));
        }
        let d = self.exponents.d();
        let points = (n.lattice.per_axis as f64).powi(d as i32);
        if points > 1e6 {
            return Err(invalid("numerics.lattice.per_axis", format!("{points} lattice points exceed the limit of 1e6")));
        }
        if !(n.lambda >= 0.0 && n.lambda.is_finite()) {
            return Err(invalid("numerics.lambda", "must be nonnegative"));
        }
        if n.workers == Some(0) {
            return Err(invalid("numerics.workers", "must be at least 1"));
        }
        let field = self.drift.build_for(d, Some(&self.exponents)).map_err(|e| invalid("drift", e))?;
        self.validate_scenario(&field)
    }

    fn validate_scenario(&self, field: &dyn DriftField) -> Result<()> {
        let n = &self.numerics;
        let d = self.exponents.d();
        match self.scenario {
            Scenario::Symplectic => {
                if !matches!(self.drift, DriftSpec::Hamiltonian { .. }) {
                    return Err(invalid("drift.name", "the symplectic scenario needs a hamiltonian drift"));
                }
            }
            Scenario::Circulation => {
                let DriftSpec::TaylorGreenBackward { nu, .. } = self.drift else {
                    return Err(invalid("drift.name", "the circulation scenario needs taylor_green_backward"));
                };
                if d != 2 {
                    return Err(invalid("exponents.d", "the circulation scenario is planar"));
                }
                if (nu - self.exponents.nu()).abs() > 1e-12 * nu.max(1.0) {
                    return Err(invalid("drift.nu", "must equal sigma^2 / 2 from the exponents"));
                }
                if n.n_paths < MIN_PATHS {
                    return Err(invalid("numerics.n_paths", format!("at least {MIN_PATHS} paths are required")));
                }
                if !self.n_steps().is_multiple_of(CIRCULATION_TESTS) {
                    return Err(invalid("numerics.dt", format!("step count must be a multiple of {CIRCULATION_TESTS}")));
                }
            }
            Scenario::Flow | Scenario::Moments | Scenario::Khasminskii if n.n_paths < 30 => {
                return Err(invalid("numerics.n_paths", "at least 30 paths are required for batch-means errors"));
            }
            Scenario::Flow | Scenario::Moments => {
                if !field.has_grad() {
                    return Err(invalid("drift", "this scenario needs a drift with an analytic gradient"));
                }
            }
            Scenario::Grr => {
                if n.lattice.per_axis < 5 {
                    return Err(invalid("numerics.lattice.per_axis", "the GRR scenario needs at least 5 points per axis"));
                }
                if self.n_steps() < n.lattice.per_axis - 1 {
                    return Err(invalid("numerics.dt", "needs at least one step per stored time"));
                }
            }
            Scenario::Norms | Scenario::Kernel | Scenario::Blocks | Scenario::Khasminskii => {}
        }
        Ok(())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.outputs.formats.contains(&f)
    }
}

/// Parses and validates a configuration; parse errors carry line and column.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn emit_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}
