//! Stochastic flows of diffusions with rough drifts.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod block;
pub mod domain;
pub mod drift;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod exponents;
pub mod flow;
pub mod forms;
pub mod heat_kernel;
pub mod linalg;
pub mod norms;
pub mod quad;
pub mod rng;
pub mod stats;

pub use domain::{BoxDomain, Lattice};
pub use drift::{catalog_field, CatalogField, DriftField, DriftSpec, Potential, Support};
pub use error::{Error, Result};
pub use experiment::{parse_config, run, ExperimentConfig, RunOutcome, Scenario};
pub use exponents::{delta1, delta2, Exponent, Exponents};
pub use flow::{simulate_ensemble, simulate_flow, BrownianLattice, FlowEnsemble, FlowOptions, JacobianScheme};
pub use forms::{martingale_statistic, symplectic_defect, MartingaleReport, ProcessSamples, Verdict};
pub use heat_kernel::{kernel_eval, verify_lr_norm_bound, verify_type_bound, KernelSpec};
pub use norms::{mixed_norm, NormEstimate, NormGrid};
