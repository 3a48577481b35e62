//! Euler-Maruyama flows under common noise, with tangent and inverse
//! tangent flows and Girsanov weights.
//!
//! A path index selects one Brownian realization shared by every initial
//! point. Paths are simulated independently and streamed through a
//! [`PathObserver`], so large ensembles never need to be stored.

mod dump;
mod dyson;

pub use dump::{decode_dump, encode_dump, read_dump, write_dump, TrajectoryDump};
pub use dyson::{dyson_series, DysonResult};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::linalg::{identity, mat_mul};
use crate::rng::{fill_normals, normal_words, stream_rng};

/// Brownian increments addressed by `(seed, path, step)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrownianLattice {
    dt: f64,
    n_steps: usize,
    d: usize,
    seed: u64,
    n_paths: usize,
    /// Fine steps summed into one step.
    aggregate: usize,
}

impl BrownianLattice {
    pub fn new(dt: f64, n_steps: usize, d: usize, seed: u64, n_paths: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || n_steps == 0 || d == 0 || n_paths == 0 {
            return Err(Error::InvalidParameter(format!(
                "lattice needs dt > 0 and positive sizes (dt = {dt}, steps = {n_steps}, d = {d}, paths = {n_paths})"
            )));
        }
        Ok(BrownianLattice { dt, n_steps, d, seed, n_paths, aggregate: 1 })
    }

    /// Lattice over `[0, horizon]` with the step count rounded to hit the horizon.
    pub fn for_horizon(dt: f64, horizon: f64, d: usize, seed: u64, n_paths: usize) -> Result<Self> {
        let n = (horizon / dt).round().max(1.0) as usize;
        Self::new(horizon / n as f64, n, d, seed, n_paths)
    }

    /// Same Brownian paths sampled at `factor` times the step.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::InvalidParameter(format!("{} steps do not split into blocks of {factor}", self.n_steps)));
        }
        Ok(BrownianLattice {
            dt: self.dt * factor as f64,
            n_steps: self.n_steps / factor,
            aggregate: self.aggregate * factor,
            ..self.clone()
        })
    }

    pub fn with_paths(&self, n_paths: usize) -> Self {
        BrownianLattice { n_paths, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        BrownianLattice { seed, ..self.clone() }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// Number of steps reaching `t`, which must be a grid time.
    pub fn steps_to(&self, t: f64) -> Result<usize> {
        let n = (t / self.dt).round();
        if !(t >= 0.0) || (n * self.dt - t).abs() > 1e-9 * t.max(self.dt) || n as usize > self.n_steps {
            return Err(Error::Precondition(format!(
                "t = {t} is not a grid time of a lattice with dt = {} and {} steps",
                self.dt, self.n_steps
            )));
        }
        Ok(n as usize)
    }

    /// Sequential reader of the increments of `path` from step 0.
    pub fn noise(&self, path: usize) -> PathNoise {
        PathNoise {
            rng: stream_rng(self.seed, path as u64),
            sd: (self.dt / self.aggregate as f64).sqrt(),
            aggregate: self.aggregate,
            buf: vec![0.0; self.d],
        }
    }

    /// Increment `B(t_{step+1}) - B(t_step)` of `path`, regenerated directly.
    pub fn increment(&self, path: usize, step: usize, out: &mut [f64]) {
        let mut noise = self.noise(path);
        noise.rng.set_word_pos(step as u128 * self.aggregate as u128 * normal_words(self.d));
        noise.next_into(out);
    }
}

/// Sequential increments of one path.
pub struct PathNoise {
    rng: ChaCha8Rng,
    sd: f64,
    aggregate: usize,
    buf: Vec<f64>,
}

impl PathNoise {
    pub fn next_into(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.aggregate {
            fill_normals(&mut self.rng, &mut self.buf);
            for (o, b) in out.iter_mut().zip(&self.buf) {
                *o += self.sd * b;
            }
        }
    }
}

/// Discretization of the tangent equation along the frozen path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianScheme {
    /// `J ← (I + dt Du(X_k)) J`: the exact derivative of the Euler-Maruyama map.
    #[default]
    EulerTangent,
    /// Trapezoidal predictor-corrector using `Du` at both step ends.
    Heun,
}

/// What the engine integrates alongside the positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowOptions {
    pub sigma: f64,
    pub t_final: f64,
    /// Fine steps between stored times.
    #[serde(default = "one_usize")]
    pub stride: usize,
    #[serde(default)]
    pub jacobian: Option<JacobianScheme>,
    #[serde(default)]
    pub inverse: bool,
    /// Simulate `a + σB` and accumulate the Girsanov log weight of the drift
    /// instead of following the drift.
    #[serde(default)]
    pub reference_measure: bool,
}

fn one_usize() -> usize {
    1
}

impl FlowOptions {
    pub fn positions(sigma: f64, t_final: f64) -> Self {
        FlowOptions { sigma, t_final, stride: 1, jacobian: None, inverse: false, reference_measure: false }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn with_jacobians(mut self, scheme: JacobianScheme) -> Self {
        self.jacobian = Some(scheme);
        self.inverse = true;
        self
    }

    pub fn with_reference_measure(mut self) -> Self {
        self.reference_measure = true;
        self
    }
}

/// State of one path at a stored time.
pub struct PathView<'a> {
    pub path: usize,
    /// Index into the stored time grid.
    pub index: usize,
    pub step: usize,
    pub t: f64,
    pub d: usize,
    /// `n_points x d`.
    pub positions: &'a [f64],
    /// `n_points x d x d`, empty unless requested.
    pub jacobians: &'a [f64],
    pub inverse: &'a [f64],
    /// Per point, empty unless simulating under the reference measure.
    pub log_weights: &'a [f64],
}

impl PathView<'_> {
    pub fn position(&self, point: usize) -> &[f64] {
        &self.positions[point * self.d..(point + 1) * self.d]
    }

    pub fn jacobian(&self, point: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.jacobians[point * dd..(point + 1) * dd]
    }

    pub fn inverse_jacobian(&self, point: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.inverse[point * dd..(point + 1) * dd]
    }
}

/// Consumes one path at its stored times.
pub trait PathObserver {
    type Output: Send;
    fn observe(&mut self, view: &PathView<'_>);
    fn finish(self) -> Self::Output;
}

/// Stored step indices: multiples of the stride, plus the final step.
pub fn output_steps(n_final: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut s: Vec<usize> = (0..=n_final).step_by(stride).collect();
    if *s.last().unwrap_or(&0) != n_final {
        s.push(n_final);
    }
    s
}

fn validate(drift: &dyn DriftField, lattice: &BrownianLattice, points: &[f64], opts: &FlowOptions) -> Result<usize> {
    let d = lattice.dim();
    if drift.dim() != d {
        return Err(Error::InvalidParameter(format!("drift dimension {} differs from lattice dimension {d}", drift.dim())));
    }
    if points.is_empty() || !points.len().is_multiple_of(d) {
        return Err(Error::InvalidParameter(format!("{} coordinates do not form points in dimension {d}", points.len())));
    }
    if !(opts.sigma >= 0.0 && opts.sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma = {} must be nonnegative", opts.sigma)));
    }
    if (opts.jacobian.is_some() || opts.inverse) && !drift.has_grad() {
        return Err(Error::MissingGradient(drift.name()));
    }
    if opts.reference_measure && opts.sigma == 0.0 {
        return Err(Error::Precondition("the reference measure needs sigma > 0".into()));
    }
    lattice.steps_to(opts.t_final)
}

/// Simulates one path and feeds its stored times to `obs`. Returns `None`
/// when a coordinate becomes non-finite.
pub fn simulate_path<O: PathObserver>(
    drift: &dyn DriftField,
    lattice: &BrownianLattice,
    points: &[f64],
    opts: &FlowOptions,
    path: usize,
    mut obs: O,
) -> Result<Option<O::Output>> {
    let n_final = validate(drift, lattice, points, opts)?;
    let d = lattice.dim();
    let dd = d * d;
    let n_points = points.len() / d;
    let dt = lattice.dt();
    let scheme = opts.jacobian;
    let track_grad = scheme.is_some() || opts.inverse;
    let heun = scheme == Some(JacobianScheme::Heun);
    let nu = opts.sigma * opts.sigma / 2.0;

    let mut x = points.to_vec();
    let mut jac = if scheme.is_some() { (0..n_points).flat_map(|_| identity(d)).collect() } else { Vec::new() };
    let mut inv = if opts.inverse { (0..n_points).flat_map(|_| identity(d)).collect() } else { Vec::new() };
    let mut logw = if opts.reference_measure { vec![0.0; n_points] } else { Vec::new() };
    let mut u = vec![0.0; d];
    let mut du = vec![0.0; dd];
    let mut du1 = vec![0.0; dd];
    let mut tmp = vec![0.0; dd];
    let mut tmp2 = vec![0.0; dd];
    let mut db = vec![0.0; d];
    let mut noise = lattice.noise(path);
    let stored = output_steps(n_final, opts.stride);
    let mut next = 0;

    for step in 0..=n_final {
        if stored[next] == step {
            if !x.iter().chain(&jac).chain(&inv).chain(&logw).all(|v| v.is_finite()) {
                return Ok(None);
            }
            obs.observe(&PathView {
                path,
                index: next,
                step,
                t: step as f64 * dt,
                d,
                positions: &x,
                jacobians: &jac,
                inverse: &inv,
                log_weights: &logw,
            });
            next += 1;
        }
        if step == n_final {
            break;
        }
        let t = step as f64 * dt;
        noise.next_into(&mut db);
        for p in 0..n_points {
            let xp = &mut x[p * d..(p + 1) * d];
            if track_grad {
                drift.eval_with_grad(xp, t, &mut u, &mut du);
            } else {
                drift.eval(xp, t, &mut u);
            }
            if opts.reference_measure {
                let mut dot = 0.0;
                let mut sq = 0.0;
                for i in 0..d {
                    dot += u[i] * opts.sigma * db[i];
                    sq += u[i] * u[i];
                }
                logw[p] += dot / (2.0 * nu) - sq * dt / (4.0 * nu);
                for i in 0..d {
                    xp[i] += opts.sigma * db[i];
                }
            } else {
                for i in 0..d {
                    xp[i] += u[i] * dt + opts.sigma * db[i];
                }
            }
            if !track_grad {
                continue;
            }
            if heun {
                drift.grad(xp, t + dt, &mut du1);
            }
            if scheme.is_some() {
                let j = &mut jac[p * dd..(p + 1) * dd];
                // tmp = A_k J
                mat_mul(&du, j, d, &mut tmp);
                if heun {
                    // J + dt/2 (A_k J + A_{k+1} (J + dt A_k J))
                    for k in 0..dd {
                        tmp2[k] = j[k] + dt * tmp[k];
                    }
                    let pred = tmp2.clone();
                    mat_mul(&du1, &pred, d, &mut tmp2);
                    for k in 0..dd {
                        j[k] += 0.5 * dt * (tmp[k] + tmp2[k]);
                    }
                } else {
                    for k in 0..dd {
                        j[k] += dt * tmp[k];
                    }
                }
            }
            if opts.inverse {
                let kinv = &mut inv[p * dd..(p + 1) * dd];
                mat_mul(kinv, &du, d, &mut tmp);
                if heun {
                    for k in 0..dd {
                        tmp2[k] = kinv[k] - dt * tmp[k];
                    }
                    let pred = tmp2.clone();
                    mat_mul(&pred, &du1, d, &mut tmp2);
                    for k in 0..dd {
                        kinv[k] -= 0.5 * dt * (tmp[k] + tmp2[k]);
                    }
                } else {
                    for k in 0..dd {
                        kinv[k] -= dt * tmp[k];
                    }
                }
            }
        }
    }
    Ok(Some(obs.finish()))
}

/// Runs every path of the lattice in parallel; outputs are in path order,
/// `None` for paths that left the finite range.
pub fn run_paths<O, F>(
    drift: &dyn DriftField,
    lattice: &BrownianLattice,
    points: &[f64],
    opts: &FlowOptions,
    make: F,
) -> Result<Vec<Option<O::Output>>>
where
    O: PathObserver,
    F: Fn(usize) -> O + Sync,
{
    validate(drift, lattice, points, opts)?;
    (0..lattice.n_paths()).into_par_iter().map(|p| simulate_path(drift, lattice, points, opts, p, make(p))).collect()
}

/// Identifying data of an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMeta {
    pub drift: String,
    pub sigma: f64,
    pub dt: f64,
    pub seed: u64,
    pub lattice: BrownianLattice,
    pub options: FlowOptions,
}

/// Stored ensemble. Arrays are laid out `[path][time][point][...]` over the
/// retained paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEnsemble {
    pub d: usize,
    pub initial_points: Vec<f64>,
    pub times: Vec<f64>,
    /// Lattice path index of every retained path.
    pub paths: Vec<usize>,
    /// Paths dropped after leaving the finite range.
    pub flagged: Vec<usize>,
    pub positions: Vec<f64>,
    pub jacobians: Option<Vec<f64>>,
    pub inverse_jacobians: Option<Vec<f64>>,
    pub girsanov_log_weights: Option<Vec<f64>>,
    pub meta: FlowMeta,
}

struct Store {
    pos: Vec<f64>,
    jac: Vec<f64>,
    inv: Vec<f64>,
    logw: Vec<f64>,
}

impl PathObserver for Store {
    type Output = Store;
    fn observe(&mut self, v: &PathView<'_>) {
        self.pos.extend_from_slice(v.positions);
        self.jac.extend_from_slice(v.jacobians);
        self.inv.extend_from_slice(v.inverse);
        self.logw.extend_from_slice(v.log_weights);
    }
    fn finish(self) -> Store {
        self
    }
}

impl FlowEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn n_points(&self) -> usize {
        self.initial_points.len() / self.d
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn initial_point(&self, point: usize) -> &[f64] {
        &self.initial_points[point * self.d..(point + 1) * self.d]
    }

    /// Index of the stored time closest to `t`.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let (i, gap) = self
            .times
            .iter()
            .enumerate()
            .map(|(i, s)| (i, (s - t).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::InsufficientData("ensemble stores no times".into()))?;
        if gap > 1e-9 * t.abs().max(self.meta.dt) {
            return Err(Error::Precondition(format!("t = {t} is not a stored time")));
        }
        Ok(i)
    }

    fn slot(&self, path: usize, time: usize, point: usize) -> usize {
        (path * self.n_times() + time) * self.n_points() + point
    }

    pub fn position(&self, path: usize, time: usize, point: usize) -> &[f64] {
        let s = self.slot(path, time, point) * self.d;
        &self.positions[s..s + self.d]
    }

    pub fn jacobian(&self, path: usize, time: usize, point: usize) -> Result<&[f64]> {
        let dd = self.d * self.d;
        let s = self.slot(path, time, point) * dd;
        self.jacobians.as_ref().map(|j| &j[s..s + dd]).ok_or(Error::MissingJacobians)
    }

    pub fn inverse_jacobian(&self, path: usize, time: usize, point: usize) -> Result<&[f64]> {
        let dd = self.d * self.d;
        let s = self.slot(path, time, point) * dd;
        self.inverse_jacobians.as_ref().map(|j| &j[s..s + dd]).ok_or(Error::MissingJacobians)
    }

    pub fn log_weight(&self, path: usize, time: usize, point: usize) -> Option<f64> {
        let s = self.slot(path, time, point);
        self.girsanov_log_weights.as_ref().map(|w| w[s])
    }
}

/// Simulates and stores every path.
pub fn simulate_ensemble(drift: &dyn DriftField, lattice: &BrownianLattice, points: &[f64], opts: &FlowOptions) -> Result<FlowEnsemble> {
    let n_final = validate(drift, lattice, points, opts)?;
    let times: Vec<f64> = output_steps(n_final, opts.stride).iter().map(|&s| s as f64 * lattice.dt()).collect();
    let outs = run_paths(drift, lattice, points, opts, |_| Store { pos: Vec::new(), jac: Vec::new(), inv: Vec::new(), logw: Vec::new() })?;
    let mut ens = FlowEnsemble {
        d: lattice.dim(),
        initial_points: points.to_vec(),
        times,
        paths: Vec::new(),
        flagged: Vec::new(),
        positions: Vec::new(),
        jacobians: opts.jacobian.map(|_| Vec::new()),
        inverse_jacobians: opts.inverse.then(Vec::new),
        girsanov_log_weights: opts.reference_measure.then(Vec::new),
        meta: FlowMeta {
            drift: drift.name(),
            sigma: opts.sigma,
            dt: lattice.dt(),
            seed: lattice.seed(),
            lattice: lattice.clone(),
            options: opts.clone(),
        },
    };
    for (p, out) in outs.into_iter().enumerate() {
        match out {
            Some(s) => {
                ens.paths.push(p);
                ens.positions.extend(s.pos);
                if let Some(j) = ens.jacobians.as_mut() {
                    j.extend(s.jac);
                }
                if let Some(j) = ens.inverse_jacobians.as_mut() {
                    j.extend(s.inv);
                }
                if let Some(w) = ens.girsanov_log_weights.as_mut() {
                    w.extend(s.logw);
                }
            }
            None => ens.flagged.push(p),
        }
    }
    Ok(ens)
}

/// Positions only, stored every `stride` steps.
pub fn simulate_flow(
    drift: &dyn DriftField,
    lattice: &BrownianLattice,
    points: &[f64],
    sigma: f64,
    t_final: f64,
    stride: usize,
) -> Result<FlowEnsemble> {
    simulate_ensemble(drift, lattice, points, &FlowOptions::positions(sigma, t_final).with_stride(stride))
}

fn rerun_with(ens: &mut FlowEnsemble, drift: &dyn DriftField, opts: FlowOptions) -> Result<()> {
    if drift.name() != ens.meta.drift {
        return Err(Error::Precondition(format!("ensemble was built from `{}`, not `{}`", ens.meta.drift, drift.name())));
    }
    if !drift.has_grad() {
        return Err(Error::MissingGradient(drift.name()));
    }
    *ens = simulate_ensemble(drift, &ens.meta.lattice, &ens.initial_points, &opts)?;
    Ok(())
}

/// Adds tangent flows `J(0) = I` along the ensemble's frozen paths. Paths are
/// regenerated from the lattice, so positions are unchanged bit for bit.
pub fn jacobian_flow(ens: &mut FlowEnsemble, drift: &dyn DriftField, scheme: JacobianScheme) -> Result<()> {
    let opts = FlowOptions { jacobian: Some(scheme), ..ens.meta.options.clone() };
    rerun_with(ens, drift, opts)
}

/// Adds inverse tangent flows `dK = -K Du dt`, `K(0) = I`.
pub fn inverse_jacobian_flow(ens: &mut FlowEnsemble, drift: &dyn DriftField) -> Result<()> {
    let opts = FlowOptions { inverse: true, ..ens.meta.options.clone() };
    rerun_with(ens, drift, opts)
}

struct Last(Vec<f64>);

impl PathObserver for Last {
    type Output = Vec<f64>;
    fn observe(&mut self, v: &PathView<'_>) {
        self.0.clear();
        self.0.extend_from_slice(v.positions);
    }
    fn finish(self) -> Vec<f64> {
        self.0
    }
}

/// Central differences of the flow at `a` over `2d` perturbed starts that
/// share the noise of `path`. Row-major `∂X_i / ∂a_j`.
pub fn finite_difference_jacobian(
    drift: &dyn DriftField,
    lattice: &BrownianLattice,
    a: &[f64],
    h: f64,
    sigma: f64,
    t: f64,
    path: usize,
) -> Result<Vec<f64>> {
    let d = a.len();
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h = {h} must be positive")));
    }
    let mut pts = Vec::with_capacity(2 * d * d);
    for j in 0..d {
        for s in [1.0, -1.0] {
            let mut p = a.to_vec();
            p[j] += s * h;
            pts.extend(p);
        }
    }
    let x = simulate_path(drift, lattice, &pts, &FlowOptions::positions(sigma, t).with_stride(usize::MAX), path, Last(Vec::new()))?
        .ok_or_else(|| Error::Precondition("perturbed trajectory left the finite range".into()))?;
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        let plus = &x[2 * j * d..(2 * j + 1) * d];
        let minus = &x[(2 * j + 1) * d..(2 * j + 2) * d];
        for i in 0..d {
            jac[i * d + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `log M_u` at time `t` along the reference path `a + σB` of `path`.
pub fn girsanov_log_weight(drift: &dyn DriftField, lattice: &BrownianLattice, a: &[f64], sigma: f64, t: f64, path: usize) -> Result<f64> {
    struct W(f64);
    impl PathObserver for W {
        type Output = f64;
        fn observe(&mut self, v: &PathView<'_>) {
            self.0 = v.log_weights[0];
        }
        fn finish(self) -> f64 {
            self.0
        }
    }
    let opts = FlowOptions::positions(sigma, t).with_stride(usize::MAX).with_reference_measure();
    simulate_path(drift, lattice, a, &opts, path, W(0.0))?.ok_or_else(|| Error::Precondition("reference path left the finite range".into()))
}
