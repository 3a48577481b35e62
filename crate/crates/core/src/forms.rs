//! Pullbacks of 1-forms under the flow, pairings with test fields, and
//! zero-mean-increment tests for the resulting processes.

use std::f64::consts::PI;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::domain::{BoxDomain, Lattice};
use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::flow::{output_steps, run_paths, BrownianLattice, FlowEnsemble, FlowOptions, JacobianScheme, PathObserver, PathView};
use crate::linalg::{frobenius_diff, mat_mul, mat_t_vec, transpose};
use crate::rng::stream_rng;
use crate::stats::{bonferroni_z, mean_se, wilson_interval};

/// Paths required by [`martingale_statistic`].
pub const MIN_PATHS: usize = 10_000;
/// Test times required by [`martingale_statistic`].
pub const MIN_TEST_TIMES: usize = 5;

/// Time-dependent 1-form `w(x, t) · dx`.
pub trait OneForm: Send + Sync {
    fn dim(&self) -> usize;
    fn name(&self) -> String;
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]);
    /// `∂_t w`.
    fn time_derivative(&self, _x: &[f64], _t: f64, _out: &mut [f64]) -> bool {
        false
    }
    /// `dw[i * d + j] = ∂_j w_i`.
    fn gradient(&self, _x: &[f64], _t: f64, _dw: &mut [f64]) -> bool {
        false
    }
    /// Componentwise Laplacian.
    fn laplacian(&self, _x: &[f64], _t: f64, _out: &mut [f64]) -> bool {
        false
    }
}

/// Constant coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantForm {
    pub coef: Vec<f64>,
}

impl OneForm for ConstantForm {
    fn dim(&self) -> usize {
        self.coef.len()
    }
    fn name(&self) -> String {
        "constant_form".into()
    }
    fn eval(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.coef);
    }
    fn time_derivative(&self, _x: &[f64], _t: f64, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        true
    }
    fn gradient(&self, _x: &[f64], _t: f64, dw: &mut [f64]) -> bool {
        dw.iter_mut().for_each(|v| *v = 0.0);
        true
    }
    fn laplacian(&self, _x: &[f64], _t: f64, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        true
    }
}

/// `w = c exp(-|x - x0|^2 / s^2) e^{-k t}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianForm {
    pub coef: Vec<f64>,
    pub center: Vec<f64>,
    pub width: f64,
    #[serde(default)]
    pub decay: f64,
}

impl GaussianForm {
    fn profile(&self, x: &[f64], t: f64) -> (f64, f64) {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        ((-r2 / (self.width * self.width) - self.decay * t).exp(), r2)
    }
}

impl OneForm for GaussianForm {
    fn dim(&self) -> usize {
        self.coef.len()
    }
    fn name(&self) -> String {
        "gaussian_form".into()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let (g, _) = self.profile(x, t);
        out.iter_mut().zip(&self.coef).for_each(|(o, c)| *o = c * g);
    }
    fn time_derivative(&self, x: &[f64], t: f64, out: &mut [f64]) -> bool {
        let (g, _) = self.profile(x, t);
        out.iter_mut().zip(&self.coef).for_each(|(o, c)| *o = -self.decay * c * g);
        true
    }
    fn gradient(&self, x: &[f64], t: f64, dw: &mut [f64]) -> bool {
        let d = self.dim();
        let (g, _) = self.profile(x, t);
        let s2 = self.width * self.width;
        for i in 0..d {
            for j in 0..d {
                dw[i * d + j] = self.coef[i] * g * (-2.0 * (x[j] - self.center[j]) / s2);
            }
        }
        true
    }
    fn laplacian(&self, x: &[f64], t: f64, out: &mut [f64]) -> bool {
        let d = self.dim() as f64;
        let (g, r2) = self.profile(x, t);
        let s2 = self.width * self.width;
        let lap = g * (4.0 * r2 / (s2 * s2) - 2.0 * d / s2);
        out.iter_mut().zip(&self.coef).for_each(|(o, c)| *o = c * lap);
        true
    }
}

/// Velocity form `u · dx` of the backward Taylor-Green vortex
/// `u = e^{-2ν(T-t)} (sin x cos y, -cos x sin y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorGreenForm {
    pub nu: f64,
    pub horizon: f64,
}

impl TaylorGreenForm {
    fn factor(&self, t: f64) -> f64 {
        (-2.0 * self.nu * (self.horizon - t)).exp()
    }
}

impl OneForm for TaylorGreenForm {
    fn dim(&self) -> usize {
        2
    }
    fn name(&self) -> String {
        "taylor_green_form".into()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let e = self.factor(t);
        out[0] = e * x[0].sin() * x[1].cos();
        out[1] = -e * x[0].cos() * x[1].sin();
    }
    fn time_derivative(&self, x: &[f64], t: f64, out: &mut [f64]) -> bool {
        self.eval(x, t, out);
        out.iter_mut().for_each(|v| *v *= 2.0 * self.nu);
        true
    }
    fn gradient(&self, x: &[f64], t: f64, dw: &mut [f64]) -> bool {
        let e = self.factor(t);
        let (s0, c0) = x[0].sin_cos();
        let (s1, c1) = x[1].sin_cos();
        dw.copy_from_slice(&[e * c0 * c1, -e * s0 * s1, e * s0 * s1, -e * c0 * c1]);
        true
    }
    fn laplacian(&self, x: &[f64], t: f64, out: &mut [f64]) -> bool {
        self.eval(x, t, out);
        out.iter_mut().for_each(|v| *v *= -2.0);
        true
    }
}

/// Any drift field read as a 1-form; no derivatives beyond the gradient.
pub struct FieldForm<F: DriftField>(pub F);

impl<F: DriftField> OneForm for FieldForm<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn name(&self) -> String {
        format!("form_of_{}", self.0.name())
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.0.eval(x, t, out);
    }
    fn gradient(&self, x: &[f64], t: f64, dw: &mut [f64]) -> bool {
        self.0.grad(x, t, dw)
    }
}

/// Shape of a compactly supported test field built on
/// `ψ(x) = (1 - |x - c|^2 / R^2)^4` for `|x - c| < R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFieldKind {
    /// `ψ e`.
    Directional { direction: Vec<f64> },
    /// `(∂_2 ψ, -∂_1 ψ)` in two dimensions; divergence free.
    Rotational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestVectorField {
    pub kind: TestFieldKind,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl TestVectorField {
    pub fn rotational(center: Vec<f64>, radius: f64) -> Self {
        TestVectorField { kind: TestFieldKind::Rotational, center, radius }
    }

    pub fn directional(direction: Vec<f64>, center: Vec<f64>, radius: f64) -> Self {
        TestVectorField { kind: TestFieldKind::Directional { direction }, center, radius }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.radius > 0.0
            && match &self.kind {
                TestFieldKind::Directional { direction } => direction.len() == self.dim(),
                TestFieldKind::Rotational => self.dim() == 2,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("test field shape does not match its dimension".into()))
        }
    }

    /// `(ψ, ∇ψ, Δψ)`.
    fn psi(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let r2 = self.radius * self.radius;
        let y: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let s: f64 = y.iter().map(|v| v * v).sum::<f64>() / r2;
        if s >= 1.0 {
            return (0.0, vec![0.0; y.len()], 0.0);
        }
        let m = 1.0 - s;
        let grad = y.iter().map(|v| -8.0 * m.powi(3) * v / r2).collect();
        let lap = -8.0 / r2 * (y.len() as f64 * m.powi(3) - 6.0 * m * m * s);
        (m.powi(4), grad, lap)
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (psi, grad, _) = self.psi(x);
        match &self.kind {
            TestFieldKind::Directional { direction } => out.iter_mut().zip(direction).for_each(|(o, e)| *o = psi * e),
            TestFieldKind::Rotational => {
                out[0] = grad[1];
                out[1] = -grad[0];
            }
        }
    }

    pub fn divergence(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TestFieldKind::Directional { direction } => self.psi(x).1.iter().zip(direction).map(|(g, e)| g * e).sum(),
            TestFieldKind::Rotational => 0.0,
        }
    }

    pub fn is_divergence_free(&self) -> bool {
        matches!(self.kind, TestFieldKind::Rotational)
    }

    pub fn support(&self) -> BoxDomain {
        let lo = self.center.iter().map(|c| c - self.radius).collect();
        let hi = self.center.iter().map(|c| c + self.radius).collect();
        BoxDomain { lower: lo, upper: hi }
    }
}

/// Quadrature weights `w_a V(a)` and `w_a ∇·V(a)` on the lattice.
#[derive(Clone, Debug)]
pub struct PairingWeights {
    pub d: usize,
    pub v: Vec<f64>,
    pub div: Vec<f64>,
}

impl PairingWeights {
    pub fn new(lattice: &Lattice, field: &TestVectorField) -> Result<Self> {
        field.validate()?;
        let d = lattice.dim();
        if field.dim() != d {
            return Err(Error::InvalidParameter("test field and lattice dimensions differ".into()));
        }
        if !lattice.domain.covers(&field.support(), 1e-12) {
            return Err(Error::SupportNotCovered);
        }
        let mut v = vec![0.0; lattice.len() * d];
        let mut div = vec![0.0; lattice.len()];
        for i in 0..lattice.len() {
            let x = lattice.point(i);
            field.eval(x, &mut v[i * d..(i + 1) * d]);
            v[i * d..(i + 1) * d].iter_mut().for_each(|c| *c *= lattice.weights[i]);
            div[i] = lattice.weights[i] * field.divergence(x);
        }
        Ok(PairingWeights { d, v, div })
    }

    /// `Σ_a w_a coef(a) · V(a)`.
    pub fn pair(&self, coef: &[f64]) -> f64 {
        coef.iter().zip(&self.v).map(|(a, b)| a * b).sum()
    }
}

/// Trapezoid quadrature of `∫ coef(a) · V(a) da` over the lattice.
pub fn pairing(coef: &[f64], lattice: &Lattice, field: &TestVectorField) -> Result<f64> {
    if coef.len() != lattice.len() * lattice.dim() {
        return Err(Error::InvalidParameter("one coefficient vector per lattice point is required".into()));
    }
    Ok(PairingWeights::new(lattice, field)?.pair(coef))
}

/// `(D_aX)^T w(X(a,t), t)` for every retained path and initial point,
/// laid out `[path][point][d]`.
pub fn pullback_one_form(ens: &FlowEnsemble, form: &dyn OneForm, t: f64) -> Result<Vec<f64>> {
    let d = ens.d;
    if form.dim() != d {
        return Err(Error::InvalidParameter("form and ensemble dimensions differ".into()));
    }
    let ti = ens.time_index(t)?;
    let t = ens.times[ti];
    let mut out = vec![0.0; ens.n_paths() * ens.n_points() * d];
    let mut w = vec![0.0; d];
    for p in 0..ens.n_paths() {
        for a in 0..ens.n_points() {
            form.eval(ens.position(p, ti, a), t, &mut w);
            let k = (p * ens.n_points() + a) * d;
            mat_t_vec(ens.jacobian(p, ti, a)?, &w, d, &mut out[k..k + d]);
        }
    }
    Ok(out)
}

/// Per-path time series on a common grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSamples {
    pub times: Vec<f64>,
    /// `n_paths x n_times`.
    pub values: Vec<f64>,
    /// Paths dropped after leaving the finite range.
    pub flagged: usize,
}

impl ProcessSamples {
    pub fn n_paths(&self) -> usize {
        if self.times.is_empty() {
            0
        } else {
            self.values.len() / self.times.len()
        }
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let n = self.times.len();
        &self.values[p * n..(p + 1) * n]
    }

    fn from_rows(times: Vec<f64>, rows: Vec<Option<Vec<f64>>>) -> Self {
        let flagged = rows.iter().filter(|r| r.is_none()).count();
        let values = rows.into_iter().flatten().flatten().collect();
        ProcessSamples { times, values, flagged }
    }
}

/// Outcome of a zero-mean-increment test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Reject,
    TriviallyConstant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub times: Vec<f64>,
    pub mean_increments: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `None` where the increment has zero spread.
    pub z_scores: Vec<Option<f64>>,
    pub max_abs_z: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub n_paths: usize,
    pub verdict: Verdict,
}

fn increment_stats(s: &ProcessSamples) -> (Vec<f64>, Vec<f64>) {
    let n = s.times.len();
    let paths = s.n_paths();
    (1..n)
        .map(|i| {
            let inc: Vec<f64> = (0..paths).map(|p| s.values[p * n + i] - s.values[p * n + i - 1]).collect();
            let m = mean_se(&inc);
            (m.mean, m.se)
        })
        .unzip()
}

fn scale_of(s: &ProcessSamples) -> f64 {
    s.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300)
}

fn verdict_from(means: &[f64], ses: &[f64], scale: f64, alpha: f64) -> (Vec<Option<f64>>, f64, f64, Verdict) {
    let threshold = bonferroni_z(alpha, means.len());
    let tiny = 1e-12 * scale;
    let mut z_scores = Vec::with_capacity(means.len());
    let mut max_abs = 0.0f64;
    let mut reject = false;
    let mut all_flat = true;
    for (&m, &se) in means.iter().zip(ses) {
        if se <= tiny {
            z_scores.push(None);
            reject |= m.abs() > tiny;
        } else {
            all_flat = false;
            let z = m / se;
            max_abs = max_abs.max(z.abs());
            reject |= z.abs() > threshold;
            z_scores.push(Some(z));
        }
    }
    let verdict = if reject {
        Verdict::Reject
    } else if all_flat {
        Verdict::TriviallyConstant
    } else {
        Verdict::Pass
    };
    (z_scores, max_abs, threshold, verdict)
}

fn check_shape(s: &ProcessSamples) -> Result<()> {
    if s.times.len() < MIN_TEST_TIMES + 1 {
        return Err(Error::InsufficientData(format!("need at least {MIN_TEST_TIMES} test times after the start")));
    }
    if s.n_paths() < MIN_PATHS {
        return Err(Error::InsufficientData(format!("{} paths, at least {MIN_PATHS} required", s.n_paths())));
    }
    Ok(())
}

/// Per-increment z-tests of zero mean with a Bonferroni threshold at
/// family level `alpha`.
pub fn martingale_statistic(samples: &ProcessSamples, alpha: f64) -> Result<MartingaleReport> {
    check_shape(samples)?;
    let (means, ses) = increment_stats(samples);
    let (z_scores, max_abs_z, threshold, verdict) = verdict_from(&means, &ses, scale_of(samples), alpha);
    Ok(MartingaleReport {
        times: samples.times.clone(),
        mean_increments: means,
        std_errors: ses,
        z_scores,
        max_abs_z,
        threshold,
        alpha,
        n_paths: samples.n_paths(),
        verdict,
    })
}

/// Rejection rate of the test against the planted alternative `M_t + c t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    /// Planted drift rate `c`.
    pub drift_rate: f64,
    /// `c · (smallest step)` in units of the largest increment SE.
    pub shift_in_se: f64,
    pub replicates: usize,
    pub rejections: usize,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Bootstrap estimate of the rejection probability when a drift of
/// `shift_in_se` increment standard errors per smallest step is planted.
pub fn planted_power(samples: &ProcessSamples, alpha: f64, shift_in_se: f64, replicates: usize, seed: u64) -> Result<PowerReport> {
    check_shape(samples)?;
    let n = samples.times.len();
    let paths = samples.n_paths();
    let (_, ses) = increment_stats(samples);
    let max_se = ses.iter().copied().fold(0.0, f64::max);
    let min_step = samples.times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let scale = scale_of(samples);
    let drift_rate = if max_se > 0.0 { shift_in_se * max_se / min_step } else { shift_in_se * scale / min_step };
    let mut rng = stream_rng(seed, 0);
    let mut rejections = 0;
    let mut boot = vec![0.0; paths * n];
    for _ in 0..replicates {
        for p in 0..paths {
            let src = (rng.next_u64() % paths as u64) as usize;
            for i in 0..n {
                boot[p * n + i] = samples.values[src * n + i] + drift_rate * samples.times[i];
            }
        }
        let b = ProcessSamples { times: samples.times.clone(), values: boot.clone(), flagged: 0 };
        let (means, ses) = increment_stats(&b);
        if verdict_from(&means, &ses, scale_of(&b), alpha).3 == Verdict::Reject {
            rejections += 1;
        }
    }
    let (lower, upper) = wilson_interval(rejections, replicates, 1.959_963_984_540_054);
    Ok(PowerReport { drift_rate, shift_in_se, replicates, rejections, rate: rejections as f64 / replicates.max(1) as f64, lower, upper })
}

/// Standard symplectic matrix `[[0, I], [-I, 0]]`.
pub fn symplectic_matrix(d: usize) -> Result<Vec<f64>> {
    if !d.is_multiple_of(2) {
        return Err(Error::OddDimension(d));
    }
    let n = d / 2;
    let mut j = vec![0.0; d * d];
    for i in 0..n {
        j[i * d + n + i] = 1.0;
        j[(n + i) * d + i] = -1.0;
    }
    Ok(j)
}

/// `‖Jᵀ Ω J - Ω‖_F`.
pub fn symplectic_defect(jac: &[f64], d: usize) -> Result<f64> {
    let omega = symplectic_matrix(d)?;
    let mut tmp = vec![0.0; d * d];
    let mut out = vec![0.0; d * d];
    mat_mul(&omega, jac, d, &mut tmp);
    mat_mul(&transpose(jac, d), &tmp, d, &mut out);
    Ok(frobenius_diff(&out, &omega))
}

/// Symplectic defect per retained path at `t`, for initial point `point`.
pub fn symplectic_residual(ens: &FlowEnsemble, t: f64, point: usize) -> Result<Vec<f64>> {
    let ti = ens.time_index(t)?;
    (0..ens.n_paths()).map(|p| symplectic_defect(ens.jacobian(p, ti, point)?, ens.d)).collect()
}

/// Simulation layout shared by the streamed processes.
#[derive(Clone)]
pub struct ProcessSetup<'a> {
    pub drift: &'a dyn DriftField,
    pub lattice: &'a BrownianLattice,
    pub sigma: f64,
    pub t_final: f64,
    /// Number of equally spaced test times after `t = 0`.
    pub n_tests: usize,
}

impl ProcessSetup<'_> {
    fn test_stride(&self) -> Result<(usize, usize)> {
        let n = self.lattice.steps_to(self.t_final)?;
        if self.n_tests == 0 || n % self.n_tests != 0 {
            return Err(Error::Precondition(format!("{n} steps do not split into {} test intervals", self.n_tests)));
        }
        Ok((n, n / self.n_tests))
    }

    fn test_times(&self, n: usize, stride: usize) -> Vec<f64> {
        output_steps(n, stride).iter().map(|&s| s as f64 * self.lattice.dt()).collect()
    }
}

struct Circulation<'a> {
    form: &'a dyn OneForm,
    weights: &'a PairingWeights,
    out: Vec<f64>,
    w: Vec<f64>,
    pw: Vec<f64>,
}

impl PathObserver for Circulation<'_> {
    type Output = Vec<f64>;
    fn observe(&mut self, v: &PathView<'_>) {
        let d = v.d;
        let mut total = 0.0;
        for a in 0..v.positions.len() / d {
            self.form.eval(v.position(a), v.t, &mut self.w);
            mat_t_vec(v.jacobian(a), &self.w, d, &mut self.pw);
            total += self.pw.iter().zip(&self.weights.v[a * d..(a + 1) * d]).map(|(x, y)| x * y).sum::<f64>();
        }
        self.out.push(total);
    }
    fn finish(self) -> Vec<f64> {
        self.out
    }
}

/// `∫ X_t^* β^t(V) da` at the test times, one series per path.
pub fn pullback_pairing_process(
    setup: &ProcessSetup<'_>,
    form: &dyn OneForm,
    lattice: &Lattice,
    field: &TestVectorField,
) -> Result<ProcessSamples> {
    let (n, stride) = setup.test_stride()?;
    let weights = PairingWeights::new(lattice, field)?;
    let d = lattice.dim();
    let opts = FlowOptions::positions(setup.sigma, setup.t_final).with_stride(stride).with_jacobians(JacobianScheme::EulerTangent);
    let opts = FlowOptions { inverse: false, ..opts };
    let rows = run_paths(setup.drift, setup.lattice, &lattice.points, &opts, |_| Circulation {
        form,
        weights: &weights,
        out: Vec::with_capacity(setup.n_tests + 1),
        w: vec![0.0; d],
        pw: vec![0.0; d],
    })?;
    Ok(ProcessSamples::from_rows(setup.test_times(n, stride), rows))
}

/// Circulation of the flow's velocity form against a divergence-free field.
pub fn circulation_process(
    setup: &ProcessSetup<'_>,
    form: &dyn OneForm,
    lattice: &Lattice,
    field: &TestVectorField,
) -> Result<ProcessSamples> {
    if lattice.dim() != 2 || !field.is_divergence_free() {
        return Err(Error::NotDivergenceFree);
    }
    pullback_pairing_process(setup, form, lattice, field)
}

struct Transport<'a> {
    drift: &'a dyn DriftField,
    form: &'a dyn OneForm,
    weights: &'a PairingWeights,
    nu: f64,
    dt: f64,
    test_stride: usize,
    start: f64,
    integral: f64,
    last_integrand: Option<f64>,
    out: Vec<f64>,
    buf: [Vec<f64>; 5],
    dw: Vec<f64>,
}

impl Transport<'_> {
    /// `(pairing of X*β, pairing of the compensator integrand)`.
    fn evaluate(&mut self, v: &PathView<'_>) -> (f64, f64) {
        let d = v.d;
        let [w, wt, lap, u, h] = &mut self.buf;
        let mut value = 0.0;
        let mut integrand = 0.0;
        for a in 0..v.positions.len() / d {
            let x = v.position(a);
            let jac = v.jacobian(a);
            let va = &self.weights.v[a * d..(a + 1) * d];
            self.form.eval(x, v.t, w);
            self.form.time_derivative(x, v.t, wt);
            self.form.gradient(x, v.t, &mut self.dw);
            self.form.laplacian(x, v.t, lap);
            self.drift.eval(x, v.t, u);
            // h = ∂_t w + (Dw - Dwᵀ) u + ν Δw
            for i in 0..d {
                let curl: f64 = (0..d).map(|j| (self.dw[i * d + j] - self.dw[j * d + i]) * u[j]).sum();
                h[i] = wt[i] + curl + self.nu * lap[i];
            }
            let mut pw = [0.0; 8];
            mat_t_vec(jac, w, d, &mut pw[..d]);
            value += pw[..d].iter().zip(va).map(|(p, q)| p * q).sum::<f64>();
            mat_t_vec(jac, h, d, &mut pw[..d]);
            integrand += pw[..d].iter().zip(va).map(|(p, q)| p * q).sum::<f64>();
            // weak form of the exact part: -∫ (w·u)(X) ∇·V
            let wu: f64 = w.iter().zip(u.iter()).map(|(p, q)| p * q).sum();
            integrand -= wu * self.weights.div[a];
        }
        (value, integrand)
    }
}

impl PathObserver for Transport<'_> {
    type Output = Vec<f64>;
    fn observe(&mut self, v: &PathView<'_>) {
        let (value, g) = self.evaluate(v);
        match self.last_integrand {
            None => self.start = value,
            Some(prev) => self.integral += 0.5 * self.dt * (prev + g),
        }
        self.last_integrand = Some(g);
        if v.step.is_multiple_of(self.test_stride) {
            self.out.push(value - self.start - self.integral);
        }
    }
    fn finish(self) -> Vec<f64> {
        self.out
    }
}

/// `M_t(V) = ∫ [X_t^*β^t - β^0 - ∫_0^t X_s^*(∂_s β^s + A_u β^s) ds](V) da`,
/// with the exact part of the Lie derivative moved onto `∇·V` and the time
/// integral by the trapezoid rule on the fine grid.
pub fn transport_process(
    setup: &ProcessSetup<'_>,
    form: &dyn OneForm,
    lattice: &Lattice,
    field: &TestVectorField,
) -> Result<ProcessSamples> {
    let d = lattice.dim();
    if d > 8 {
        return Err(Error::InvalidParameter("transport process supports d <= 8".into()));
    }
    let probe = lattice.point(0);
    let mut scratch = vec![0.0; d];
    let mut dscratch = vec![0.0; d * d];
    if !form.time_derivative(probe, 0.0, &mut scratch) {
        return Err(Error::MissingFormDerivative("time_derivative"));
    }
    if !form.gradient(probe, 0.0, &mut dscratch) {
        return Err(Error::MissingFormDerivative("gradient"));
    }
    if !form.laplacian(probe, 0.0, &mut scratch) {
        return Err(Error::MissingFormDerivative("laplacian"));
    }
    let (n, stride) = setup.test_stride()?;
    let weights = PairingWeights::new(lattice, field)?;
    let opts =
        FlowOptions { inverse: false, ..FlowOptions::positions(setup.sigma, setup.t_final).with_jacobians(JacobianScheme::EulerTangent) };
    let nu = setup.sigma * setup.sigma / 2.0;
    let rows = run_paths(setup.drift, setup.lattice, &lattice.points, &opts, |_| Transport {
        drift: setup.drift,
        form,
        weights: &weights,
        nu,
        dt: setup.lattice.dt(),
        test_stride: stride,
        start: 0.0,
        integral: 0.0,
        last_integrand: None,
        out: Vec::with_capacity(setup.n_tests + 1),
        buf: std::array::from_fn(|_| vec![0.0; d]),
        dw: vec![0.0; d * d],
    })?;
    Ok(ProcessSamples::from_rows(setup.test_times(n, stride), rows))
}

struct Vorticity<'a> {
    drift: &'a dyn DriftField,
    out: Vec<Vec<f64>>,
}

impl PathObserver for Vorticity<'_> {
    type Output = Vec<Vec<f64>>;
    fn observe(&mut self, v: &PathView<'_>) {
        for (a, series) in self.out.iter_mut().enumerate() {
            series.push(self.drift.vorticity(v.position(a), v.t).unwrap_or(f64::NAN));
        }
    }
    fn finish(self) -> Vec<Vec<f64>> {
        self.out
    }
}

/// `ω(X(a,t), t)` at the test times for each initial point `a`.
pub fn vorticity_process(setup: &ProcessSetup<'_>, points: &[f64]) -> Result<Vec<ProcessSamples>> {
    if setup.drift.dim() != 2 {
        return Err(Error::InvalidParameter("vorticity needs d = 2".into()));
    }
    if setup.drift.vorticity(&points[..2], 0.0).is_none() {
        return Err(Error::MissingVorticity(setup.drift.name()));
    }
    let (n, stride) = setup.test_stride()?;
    let n_points = points.len() / 2;
    let opts = FlowOptions::positions(setup.sigma, setup.t_final).with_stride(stride);
    let rows = run_paths(setup.drift, setup.lattice, points, &opts, |_| Vorticity {
        drift: setup.drift,
        out: vec![Vec::with_capacity(setup.n_tests + 1); n_points],
    })?;
    let times = setup.test_times(n, stride);
    Ok((0..n_points)
        .map(|a| ProcessSamples::from_rows(times.clone(), rows.iter().map(|r| r.as_ref().map(|r| r[a].clone())).collect()))
        .collect())
}

/// Lattice of `per_axis^2` points covering the disc support of `field`.
pub fn covering_lattice(field: &TestVectorField, per_axis: usize) -> Result<Lattice> {
    Lattice::regular(field.support(), per_axis)
}

/// Centre of the Taylor-Green cell where the vorticity peaks.
pub const TAYLOR_GREEN_CELL: [f64; 2] = [PI / 2.0, PI / 2.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DriftSpec, Potential};
    use crate::flow::simulate_ensemble;
    use crate::linalg::identity;

    #[allow(clippy::same_item_push)]
    fn synthetic(paths: usize, n: usize, drift: f64, noise: f64, seed: u64) -> ProcessSamples {
        let mut lat = BrownianLattice::new(1.0 / n as f64, n, 1, seed, paths).unwrap().noise(0);
        let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut values = Vec::with_capacity(paths * (n + 1));
        let mut db = [0.0];
        for _ in 0..paths {
            let mut x = 0.0;
            values.push(0.0);
            for t in &times[1..] {
                lat.next_into(&mut db);
                x += noise * db[0];
                values.push(x + drift * t);
            }
        }
        ProcessSamples { times, values, flagged: 0 }
    }

    #[test]
    fn test_field_divergence_matches_finite_differences() {
        let v = TestVectorField::directional(vec![0.6, -0.8], vec![0.2, 0.1], 1.3);
        let z = TestVectorField::rotational(vec![0.2, 0.1], 1.3);
        let h = 1e-5;
        for x in [[0.3, 0.4], [-0.5, 0.2], [0.9, -0.3]] {
            for f in [&v, &z] {
                let mut fd = 0.0;
                for i in 0..2 {
                    let mut p = x;
                    let mut m = x;
                    p[i] += h;
                    m[i] -= h;
                    let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
                    f.eval(&p, &mut a);
                    f.eval(&m, &mut b);
                    fd += (a[i] - b[i]) / (2.0 * h);
                }
                assert!((fd - f.divergence(&x)).abs() < 1e-7);
            }
        }
        let (_, _, lap) = v.psi(&[0.5, 0.5]);
        let fd_lap = {
            let c = v.psi(&[0.5, 0.5]).0;
            let s: f64 = [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]].iter().map(|e| v.psi(&[0.5 + e[0], 0.5 + e[1]]).0).sum();
            (s - 4.0 * c) / (h * h)
        };
        assert!((lap - fd_lap).abs() < 1e-3);
    }

    #[test]
    fn form_derivatives_match_finite_differences() {
        let forms: Vec<Box<dyn OneForm>> = vec![
            Box::new(GaussianForm { coef: vec![1.0, -0.5], center: vec![0.1, 0.2], width: 0.9, decay: 0.3 }),
            Box::new(TaylorGreenForm { nu: 0.1, horizon: 1.0 }),
        ];
        let h = 1e-5;
        let x = [0.4, -0.3];
        let t = 0.35;
        for f in &forms {
            let mut dw = [0.0; 4];
            assert!(f.gradient(&x, t, &mut dw));
            let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
            for j in 0..2 {
                let (mut p, mut m) = (x, x);
                p[j] += h;
                m[j] -= h;
                f.eval(&p, t, &mut a);
                f.eval(&m, t, &mut b);
                for i in 0..2 {
                    assert!((dw[i * 2 + j] - (a[i] - b[i]) / (2.0 * h)).abs() < 1e-7);
                }
            }
            let mut wt = [0.0; 2];
            assert!(f.time_derivative(&x, t, &mut wt));
            f.eval(&x, t + h, &mut a);
            f.eval(&x, t - h, &mut b);
            assert!((0..2).all(|i| (wt[i] - (a[i] - b[i]) / (2.0 * h)).abs() < 1e-7));
            let mut lap = [0.0; 2];
            assert!(f.laplacian(&x, t, &mut lap));
            let mut c = [0.0; 2];
            f.eval(&x, t, &mut c);
            let h2 = 1e-3;
            let mut s = [0.0; 2];
            for e in [[h2, 0.0], [-h2, 0.0], [0.0, h2], [0.0, -h2]] {
                f.eval(&[x[0] + e[0], x[1] + e[1]], t, &mut a);
                s[0] += a[0];
                s[1] += a[1];
            }
            assert!((0..2).all(|i| (lap[i] - (s[i] - 4.0 * c[i]) / (h2 * h2)).abs() < 1e-5));
        }
    }

    #[test]
    fn taylor_green_form_solves_the_backward_equations() {
        // α̇ + (Dw - Dwᵀ)u + νΔw = -∇(|u|²/2 + P), P = e²(cos 2x + cos 2y)/4
        let f = TaylorGreenForm { nu: 0.1, horizon: 1.0 };
        let x = [0.7, -1.1];
        let t = 0.4;
        let e = f.factor(t);
        let (mut w, mut wt, mut lap, mut dw) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 4]);
        f.eval(&x, t, &mut w);
        f.time_derivative(&x, t, &mut wt);
        f.laplacian(&x, t, &mut lap);
        f.gradient(&x, t, &mut dw);
        let phi = |y: &[f64]| {
            let mut u = [0.0; 2];
            f.eval(y, t, &mut u);
            0.5 * (u[0] * u[0] + u[1] * u[1]) + e * e / 4.0 * ((2.0 * y[0]).cos() + (2.0 * y[1]).cos())
        };
        let h = 1e-6;
        for i in 0..2 {
            let curl: f64 = (0..2).map(|j| (dw[i * 2 + j] - dw[j * 2 + i]) * w[j]).sum();
            let lhs = wt[i] + curl + 0.1 * lap[i];
            let (mut p, mut m) = (x, x);
            p[i] += h;
            m[i] -= h;
            let grad = (phi(&p) - phi(&m)) / (2.0 * h);
            assert!((lhs + grad).abs() < 1e-7, "{lhs} vs {}", -grad);
        }
    }

    #[test]
    fn pairing_basics() {
        let v = TestVectorField::directional(vec![1.0, 0.0], vec![0.0, 0.0], 1.0);
        let lat = Lattice::regular(BoxDomain::centered_cube(2, 1.0), 41).unwrap();
        let zero = vec![0.0; lat.len() * 2];
        assert_eq!(pairing(&zero, &lat, &v).unwrap(), 0.0);
        let e1: Vec<f64> = (0..lat.len()).flat_map(|_| [1.0, 0.0]).collect();
        // ∫ (1 - r²)^4 over the unit disc = π / 5
        assert!((pairing(&e1, &lat, &v).unwrap() - PI / 5.0).abs() < 1e-3);
        let small = Lattice::regular(BoxDomain::centered_cube(2, 0.5), 11).unwrap();
        let c: Vec<f64> = vec![0.0; small.len() * 2];
        assert!(matches!(pairing(&c, &small, &v), Err(Error::SupportNotCovered)));
        // smooth pair against a 4x finer grid
        let coef = |l: &Lattice| -> Vec<f64> {
            (0..l.len())
                .flat_map(|i| {
                    let x = l.point(i);
                    [(x[0] + 0.3).sin(), (x[1] * x[0]).cos()]
                })
                .collect()
        };
        let coarse = Lattice::regular(BoxDomain::centered_cube(2, 1.0), 17).unwrap();
        let fine = Lattice::regular(BoxDomain::centered_cube(2, 1.0), 65).unwrap();
        let a = pairing(&coef(&coarse), &coarse, &v).unwrap();
        let b = pairing(&coef(&fine), &fine, &v).unwrap();
        assert!((a - b).abs() < 0.01 * b.abs());
    }

    #[test]
    fn pullbacks_on_simple_flows() {
        let lat = BrownianLattice::new(1e-3, 1000, 2, 1, 3).unwrap();
        let zero = DriftSpec::Zero.build(2).unwrap();
        let opts = FlowOptions::positions(0.5, 1.0).with_stride(500).with_jacobians(JacobianScheme::EulerTangent);
        let ens = simulate_ensemble(&zero, &lat, &[0.1, 0.2, -0.3, 0.4], &opts).unwrap();
        let form = GaussianForm { coef: vec![1.0, 2.0], center: vec![0.0, 0.0], width: 1.0, decay: 0.0 };
        let at0 = pullback_one_form(&ens, &form, 0.0).unwrap();
        let mut w = [0.0; 2];
        form.eval(&[0.1, 0.2], 0.0, &mut w);
        assert_eq!(&at0[..2], &w);
        let at1 = pullback_one_form(&ens, &form, 1.0).unwrap();
        form.eval(ens.position(2, 2, 1), 1.0, &mut w);
        assert_eq!(&at1[(2 * 2 + 1) * 2..(2 * 2 + 1) * 2 + 2], &w);

        let n = 20_000;
        let t = PI / 2.0;
        let rl = BrownianLattice::new(t / n as f64, n, 2, 0, 1).unwrap();
        let rot = DriftSpec::Linear { matrix: vec![0.0, 1.0, -1.0, 0.0] }.build(2).unwrap();
        let opts = FlowOptions::positions(0.0, rl.horizon()).with_stride(n).with_jacobians(JacobianScheme::Heun);
        let ens = simulate_ensemble(&rot, &rl, &[1.0, 1.0], &opts).unwrap();
        let c = ConstantForm { coef: vec![0.3, 0.7] };
        let pb = pullback_one_form(&ens, &c, rl.horizon()).unwrap();
        // R = [[0, 1], [-1, 0]], Rᵀ c = (-0.7, 0.3)
        assert!((pb[0] + 0.7).abs() < 1e-6 && (pb[1] - 0.3).abs() < 1e-6);
        let mut direct = [0.0; 2];
        mat_t_vec(ens.jacobian(0, 1, 0).unwrap(), &c.coef, 2, &mut direct);
        assert_eq!(&pb[..2], &direct);
    }

    #[test]
    fn martingale_verdicts() {
        let flat = ProcessSamples { times: (0..=6).map(|i| i as f64).collect(), values: vec![2.0; 7 * MIN_PATHS], flagged: 0 };
        assert_eq!(martingale_statistic(&flat, 0.05).unwrap().verdict, Verdict::TriviallyConstant);
        let mart = synthetic(MIN_PATHS, 10, 0.0, 1.0, 3);
        let r = martingale_statistic(&mart, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.z_scores);
        let drifted = synthetic(MIN_PATHS, 10, 0.2, 1.0, 3);
        assert_eq!(martingale_statistic(&drifted, 0.05).unwrap().verdict, Verdict::Reject);
        let power = planted_power(&mart, 0.05, 5.0, 40, 9).unwrap();
        assert!(power.rate >= 0.9, "{power:?}");
        assert!(martingale_statistic(&synthetic(100, 10, 0.0, 1.0, 1), 0.05).is_err());
        let mut shifted = flat.clone();
        for p in 0..MIN_PATHS {
            shifted.values[p * 7 + 6] = 3.0;
        }
        assert_eq!(martingale_statistic(&shifted, 0.05).unwrap().verdict, Verdict::Reject);
    }

    #[test]
    fn symplectic_defects() {
        assert_eq!(symplectic_defect(&identity(4), 4).unwrap(), 0.0);
        assert!(matches!(symplectic_defect(&identity(3), 3), Err(Error::OddDimension(3))));
        let shear = [1.0, 0.5, 0.0, 1.0];
        assert!(symplectic_defect(&shear, 2).unwrap() < 1e-15);
        let stretch = [2.0, 0.0, 0.0, 1.0];
        assert!((symplectic_defect(&stretch, 2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let lat = BrownianLattice::new(1e-3, 1000, 2, 1, 5).unwrap();
        let h = DriftSpec::Hamiltonian { potential: Potential::Harmonic, amplitude: 1.0, width: 1.0 }.build(2).unwrap();
        let opts = FlowOptions::positions(0.3, 1.0).with_stride(1000).with_jacobians(JacobianScheme::EulerTangent);
        let ens = simulate_ensemble(&h, &lat, &[0.5, 0.5], &opts).unwrap();
        assert!(symplectic_residual(&ens, 0.0, 0).unwrap().iter().all(|&r| r == 0.0));
        assert!(symplectic_residual(&ens, 1.0, 0).unwrap().iter().all(|&r| r > 0.0 && r < 2e-3));
    }

    #[test]
    fn streamed_processes_at_time_zero() {
        let tg = DriftSpec::TaylorGreenBackward { nu: 0.1, horizon: 1.0 }.build(2).unwrap();
        let form = TaylorGreenForm { nu: 0.1, horizon: 1.0 };
        let lat = BrownianLattice::new(0.01, 100, 2, 2, 8).unwrap();
        let setup = ProcessSetup { drift: &tg, lattice: &lat, sigma: (0.2f64).sqrt(), t_final: 1.0, n_tests: 5 };
        let z = TestVectorField::rotational(TAYLOR_GREEN_CELL.to_vec(), 1.2);
        let grid = covering_lattice(&z, 33).unwrap();
        let circ = circulation_process(&setup, &form, &grid, &z).unwrap();
        let u0: Vec<f64> = (0..grid.len())
            .flat_map(|i| {
                let mut w = [0.0; 2];
                form.eval(grid.point(i), 0.0, &mut w);
                w
            })
            .collect();
        let direct = pairing(&u0, &grid, &z).unwrap();
        assert!(direct.abs() > 0.1);
        assert!((0..8).all(|p| (circ.path(p)[0] - direct).abs() < 1e-12));
        assert_eq!(circ.times.len(), 6);
        // transport and circulation agree when the form is the velocity form
        let tr = transport_process(&setup, &form, &grid, &z).unwrap();
        for p in 0..8 {
            for i in 0..6 {
                let inc = circ.path(p)[i] - circ.path(p)[0];
                assert!((tr.path(p)[i] - inc).abs() < 1e-4 * (1.0 + inc.abs()), "{} vs {inc}", tr.path(p)[i]);
            }
        }
        let v = TestVectorField::directional(vec![1.0, 0.0], TAYLOR_GREEN_CELL.to_vec(), 1.2);
        assert!(matches!(circulation_process(&setup, &form, &grid, &v), Err(Error::NotDivergenceFree)));
        let vort = vorticity_process(&setup, &[1.0, 1.2]).unwrap();
        let w0 = tg.vorticity(&[1.0, 1.2], 0.0).unwrap();
        assert!((0..8).all(|p| vort[0].path(p)[0] == w0));
        let c = DriftSpec::TruncatedSingular { beta: 0.5, cutoff: 0.1, radius: 1.0 }.build(2).unwrap();
        let cs = ProcessSetup { drift: &c, ..setup.clone() };
        assert!(matches!(vorticity_process(&cs, &[0.0, 0.0]), Err(Error::MissingVorticity(_))));
        let fieldform = FieldForm(tg.clone());
        assert!(matches!(transport_process(&setup, &fieldform, &grid, &z), Err(Error::MissingFormDerivative(_))));
    }
}
