//! Drift fields `u(x, t)` and the catalog of named test fields.
//!
//! Gradients are row-major `d x d` slices with `du[i * d + j] = ∂u_i/∂x_j`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::exponents::{Exponent, Exponents};

/// Spatial support of a field.
#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    /// The field vanishes outside the box.
    Bounded(BoxDomain),
    Unbounded,
}

impl Support {
    pub fn bounding_box(&self) -> Option<&BoxDomain> {
        match self {
            Support::Bounded(b) => Some(b),
            Support::Unbounded => None,
        }
    }
}

/// A time-dependent velocity field on `R^d`.
pub trait DriftField: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]);

    fn has_grad(&self) -> bool {
        false
    }

    /// Writes `Du(x, t)` and returns `true`, or returns `false` when no
    /// analytic gradient exists.
    fn grad(&self, _x: &[f64], _t: f64, _du: &mut [f64]) -> bool {
        false
    }

    fn eval_with_grad(&self, x: &[f64], t: f64, u: &mut [f64], du: &mut [f64]) -> bool {
        self.eval(x, t, u);
        self.grad(x, t, du)
    }

    /// Analytic divergence; defaults to the trace of the gradient.
    fn divergence(&self, x: &[f64], t: f64) -> Option<f64> {
        if !self.has_grad() {
            return None;
        }
        let d = self.dim();
        let mut du = vec![0.0; d * d];
        self.grad(x, t, &mut du).then(|| (0..d).map(|i| du[i * d + i]).sum())
    }

    fn support(&self) -> Support {
        Support::Unbounded
    }

    fn is_divergence_free(&self) -> bool {
        false
    }

    /// True when `sup |u|` is finite.
    fn is_bounded(&self) -> bool {
        false
    }

    /// Analytic `‖u‖_{r,q}` over `[0, horizon]` when known.
    fn known_norm(&self, _r: Exponent, _q: Exponent, _horizon: f64) -> Option<f64> {
        None
    }

    /// Scalar vorticity `∂_x u_2 - ∂_y u_1` for planar fields.
    fn vorticity(&self, _x: &[f64], _t: f64) -> Option<f64> {
        None
    }
}

impl<F: DriftField + ?Sized> DriftField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).eval(x, t, out)
    }
    fn has_grad(&self) -> bool {
        (**self).has_grad()
    }
    fn grad(&self, x: &[f64], t: f64, du: &mut [f64]) -> bool {
        (**self).grad(x, t, du)
    }
    fn eval_with_grad(&self, x: &[f64], t: f64, u: &mut [f64], du: &mut [f64]) -> bool {
        (**self).eval_with_grad(x, t, u, du)
    }
    fn divergence(&self, x: &[f64], t: f64) -> Option<f64> {
        (**self).divergence(x, t)
    }
    fn support(&self) -> Support {
        (**self).support()
    }
    fn is_divergence_free(&self) -> bool {
        (**self).is_divergence_free()
    }
    fn is_bounded(&self) -> bool {
        (**self).is_bounded()
    }
    fn known_norm(&self, r: Exponent, q: Exponent, horizon: f64) -> Option<f64> {
        (**self).known_norm(r, q, horizon)
    }
    fn vorticity(&self, x: &[f64], t: f64) -> Option<f64> {
        (**self).vorticity(x, t)
    }
}

/// Field built from closures, mainly for tests and ad hoc integrands.
pub struct FnField<E, G = fn(&[f64], f64, &mut [f64])> {
    d: usize,
    name: String,
    eval: E,
    grad: Option<G>,
    support: Support,
}

impl<E> FnField<E>
where
    E: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(d: usize, name: impl Into<String>, eval: E) -> Self {
        FnField { d, name: name.into(), eval, grad: None, support: Support::Unbounded }
    }
}

impl<E, G> FnField<E, G>
where
    E: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
    G: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn with_grad<H>(self, grad: H) -> FnField<E, H>
    where
        H: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
    {
        FnField { d: self.d, name: self.name, eval: self.eval, grad: Some(grad), support: self.support }
    }

    pub fn with_support(mut self, support: BoxDomain) -> Self {
        self.support = Support::Bounded(support);
        self
    }
}

impl<E, G> DriftField for FnField<E, G>
where
    E: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
    G: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }
    fn name(&self) -> String {
        self.name.clone()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.eval)(x, t, out)
    }
    fn has_grad(&self) -> bool {
        self.grad.is_some()
    }
    fn grad(&self, x: &[f64], t: f64, du: &mut [f64]) -> bool {
        match &self.grad {
            Some(g) => {
                g(x, t, du);
                true
            }
            None => false,
        }
    }
    fn support(&self) -> Support {
        self.support.clone()
    }
}

/// `c * u` for a scalar `c`.
pub struct Scaled<F> {
    pub inner: F,
    pub factor: f64,
}

impl<F: DriftField> DriftField for Scaled<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn name(&self) -> String {
        format!("{}*{}", self.factor, self.inner.name())
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.inner.eval(x, t, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
    }
    fn has_grad(&self) -> bool {
        self.inner.has_grad()
    }
    fn grad(&self, x: &[f64], t: f64, du: &mut [f64]) -> bool {
        let ok = self.inner.grad(x, t, du);
        du.iter_mut().for_each(|v| *v *= self.factor);
        ok
    }
    fn divergence(&self, x: &[f64], t: f64) -> Option<f64> {
        self.inner.divergence(x, t).map(|v| v * self.factor)
    }
    fn support(&self) -> Support {
        self.inner.support()
    }
    fn is_divergence_free(&self) -> bool {
        self.inner.is_divergence_free()
    }
    fn is_bounded(&self) -> bool {
        self.inner.is_bounded()
    }
    fn known_norm(&self, r: Exponent, q: Exponent, horizon: f64) -> Option<f64> {
        self.inner.known_norm(r, q, horizon).map(|v| v * self.factor.abs())
    }
    fn vorticity(&self, x: &[f64], t: f64) -> Option<f64> {
        self.inner.vorticity(x, t).map(|v| v * self.factor)
    }
}

/// Potential used by the Hamiltonian and gradient catalog entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `H = A |x|^2 / 2`.
    Harmonic,
    /// `H = A exp(-|x|^2 / w^2)`.
    GaussianWell,
}

fn one() -> f64 {
    1.0
}

/// Serializable description of a catalog field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `u(x) = A x` with `A` given row-major.
    Linear {
        matrix: Vec<f64>,
    },
    /// `u(x) = A exp(-|x - c|^2 / w^2) e` with a unit direction `e`.
    SmoothBump {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<Vec<f64>>,
    },
    /// `u = J ∇H` in even dimension.
    Hamiltonian {
        potential: Potential,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        width: f64,
    },
    /// `u = ∇H`, a non-symplectic control.
    Gradient {
        potential: Potential,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        width: f64,
    },
    /// Decaying Taylor-Green vortex evaluated backward from `horizon`.
    TaylorGreenBackward {
        nu: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// `|x|^{-beta} x/|x|` on `|x| <= radius`, smoothed inside `cutoff`.
    TruncatedSingular {
        beta: f64,
        cutoff: f64,
        #[serde(default = "one")]
        radius: f64,
    },
}

impl DriftSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DriftSpec::Zero => "zero",
            DriftSpec::Constant { .. } => "constant",
            DriftSpec::Linear { .. } => "linear",
            DriftSpec::SmoothBump { .. } => "smooth_bump",
            DriftSpec::Hamiltonian { .. } => "hamiltonian",
            DriftSpec::Gradient { .. } => "gradient",
            DriftSpec::TaylorGreenBackward { .. } => "taylor_green_backward",
            DriftSpec::TruncatedSingular { .. } => "truncated_singular",
        }
    }

    /// Builds the field in dimension `d`.
    pub fn build(&self, d: usize) -> Result<CatalogField> {
        self.build_for(d, None)
    }

    /// Builds the field and, when exponents are given, checks that the
    /// field lies in the requested mixed space.
    pub fn build_for(&self, d: usize, exps: Option<&Exponents>) -> Result<CatalogField> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let field = match self {
            DriftSpec::Zero => CatalogField::Zero { d },
            DriftSpec::Constant { value } => {
                expect_len("constant value", value, d)?;
                CatalogField::Constant { value: value.clone() }
            }
            DriftSpec::Linear { matrix } => {
                expect_len("linear matrix", matrix, d * d)?;
                CatalogField::Linear { d, matrix: matrix.clone() }
            }
            DriftSpec::SmoothBump { amplitude, width, center, direction } => {
                positive("width", *width)?;
                finite("amplitude", *amplitude)?;
                let center = center.clone().unwrap_or_else(|| vec![0.0; d]);
                expect_len("bump center", &center, d)?;
                let mut dir = direction.clone().unwrap_or_else(|| {
                    let mut e = vec![0.0; d];
                    e[0] = 1.0;
                    e
                });
                expect_len("bump direction", &dir, d)?;
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(n > 0.0) {
                    return Err(Error::InvalidParameter("bump direction must be nonzero".into()));
                }
                dir.iter_mut().for_each(|v| *v /= n);
                CatalogField::SmoothBump { amplitude: *amplitude, width: *width, center, direction: dir }
            }
            DriftSpec::Hamiltonian { potential, amplitude, width } | DriftSpec::Gradient { potential, amplitude, width } => {
                positive("width", *width)?;
                finite("amplitude", *amplitude)?;
                let symplectic = matches!(self, DriftSpec::Hamiltonian { .. });
                if symplectic && !d.is_multiple_of(2) {
                    return Err(Error::OddDimension(d));
                }
                CatalogField::Potential { d, potential: *potential, amplitude: *amplitude, width: *width, symplectic }
            }
            DriftSpec::TaylorGreenBackward { nu, horizon } => {
                if d != 2 {
                    return Err(Error::InvalidParameter("taylor_green_backward is planar (d = 2)".into()));
                }
                positive("horizon", *horizon)?;
                if !(*nu >= 0.0) {
                    return Err(Error::InvalidParameter("nu must be nonnegative".into()));
                }
                CatalogField::TaylorGreen { nu: *nu, horizon: *horizon }
            }
            DriftSpec::TruncatedSingular { beta, cutoff, radius } => {
                SingularProfile::new(d, *beta, *cutoff, *radius).map(CatalogField::Singular)?
            }
        };
        if let (Some(e), CatalogField::Singular(s)) = (exps, &field) {
            if let Exponent::Finite(r) = e.r() {
                if s.beta * r >= d as f64 {
                    return Err(Error::InvalidParameter(format!(
                        "beta = {} must be below d/r = {} for the requested r",
                        s.beta,
                        d as f64 / r
                    )));
                }
            }
        }
        Ok(field)
    }
}

/// Builds a catalog field by name from a TOML parameter table.
pub fn catalog_field(name: &str, params: &toml::Table, d: usize) -> Result<CatalogField> {
    const NAMES: [&str; 8] =
        ["zero", "constant", "linear", "smooth_bump", "hamiltonian", "gradient", "taylor_green_backward", "truncated_singular"];
    if !NAMES.contains(&name) {
        return Err(Error::UnknownField(name.to_string()));
    }
    let mut table = params.clone();
    table.insert("name".into(), toml::Value::String(name.into()));
    let spec: DriftSpec = toml::Value::Table(table).try_into().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    spec.build(d)
}

fn expect_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvalidParameter(format!("{what} has {} entries, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} = {v} must be positive")))
    }
}

fn finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} = {v} must be finite")))
    }
}

/// Surface area of the unit sphere in `R^d`.
pub(crate) fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0)
}

/// `(∫_0^T g(t)^q dt)^{1/q}` for `g(t) = exp(-k (T - t))`.
fn time_factor_exp(k: f64, q: Exponent, horizon: f64) -> f64 {
    match q {
        Exponent::Infinite => 1.0,
        Exponent::Finite(q) => {
            if k == 0.0 {
                horizon.powf(1.0 / q)
            } else {
                ((1.0 - (-q * k * horizon).exp()) / (q * k)).powf(1.0 / q)
            }
        }
    }
}

fn time_factor(q: Exponent, horizon: f64) -> f64 {
    time_factor_exp(0.0, q, horizon)
}

/// Radial profile `phi` of the truncated singular field.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularProfile {
    pub d: usize,
    pub beta: f64,
    pub cutoff: f64,
    pub radius: f64,
    // odd quintic a1 rho + a3 rho^3 + a5 rho^5 on [0, cutoff]
    a: [f64; 3],
}

impl SingularProfile {
    pub fn new(d: usize, beta: f64, cutoff: f64, radius: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta = {beta} must be nonnegative")));
        }
        positive("cutoff", cutoff)?;
        if !(radius > cutoff && radius.is_finite()) {
            return Err(Error::InvalidParameter("radius must exceed the cutoff".into()));
        }
        let e = cutoff;
        let f0 = e.powf(-beta) / e;
        let f1 = -beta * e.powf(-beta - 1.0);
        let f2 = beta * (beta + 1.0) * e.powf(-beta - 2.0) * e;
        let b5 = (f2 - 3.0 * (f1 - f0)) / 8.0;
        let b3 = (f1 - f0) / 2.0 - 2.0 * b5;
        let b1 = f0 - b3 - b5;
        Ok(SingularProfile { d, beta, cutoff, radius, a: [b1, b3 / (e * e), b5 / e.powi(4)] })
    }

    /// `(phi(rho), phi'(rho))`.
    pub fn phi(&self, rho: f64) -> (f64, f64) {
        if rho > self.radius {
            (0.0, 0.0)
        } else if rho >= self.cutoff {
            let v = rho.powf(-self.beta);
            (v, -self.beta * v / rho)
        } else {
            let [a1, a3, a5] = self.a;
            let r2 = rho * rho;
            (rho * (a1 + r2 * (a3 + r2 * a5)), a1 + r2 * (3.0 * a3 + 5.0 * a5 * r2))
        }
    }

    fn radial_integral(&self, p: f64) -> f64 {
        let d = self.d as f64;
        let inner = gauss_legendre(0.0, self.cutoff, 64, |rho| self.phi(rho).0.abs().powf(p) * rho.powf(d - 1.0));
        let k = d - self.beta * p;
        let outer = if k.abs() < 1e-14 { (self.radius / self.cutoff).ln() } else { (self.radius.powf(k) - self.cutoff.powf(k)) / k };
        sphere_area(self.d) * (inner + outer)
    }

    /// Spatial `L^r` norm of the mollified field.
    pub fn spatial_norm(&self, r: Exponent) -> f64 {
        match r {
            Exponent::Infinite => {
                let n = 4096;
                (0..=n).map(|i| self.phi(self.cutoff * i as f64 / n as f64).0.abs()).fold(self.cutoff.powf(-self.beta), f64::max)
            }
            Exponent::Finite(r) => self.radial_integral(r).powf(1.0 / r),
        }
    }

    /// Spatial `L^r` norm of the unmollified `|x|^{-beta}` on the ball,
    /// infinite once `beta r >= d`.
    pub fn unmollified_norm(&self, r: Exponent) -> f64 {
        let d = self.d as f64;
        match r {
            Exponent::Infinite => {
                if self.beta > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            }
            Exponent::Finite(r) => {
                let k = d - self.beta * r;
                if k <= 0.0 {
                    f64::INFINITY
                } else {
                    (sphere_area(self.d) * self.radius.powf(k) / k).powf(1.0 / r)
                }
            }
        }
    }
}

fn gauss_legendre(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let rule = gauss_quad::GaussLegendre::new(n.try_into().expect("nonzero order"));
    rule.integrate(a, b, f)
}

/// The named catalog fields.
#[derive(Clone, Debug, PartialEq)]
pub enum CatalogField {
    Zero { d: usize },
    Constant { value: Vec<f64> },
    Linear { d: usize, matrix: Vec<f64> },
    SmoothBump { amplitude: f64, width: f64, center: Vec<f64>, direction: Vec<f64> },
    Potential { d: usize, potential: Potential, amplitude: f64, width: f64, symplectic: bool },
    TaylorGreen { nu: f64, horizon: f64 },
    Singular(SingularProfile),
}

impl CatalogField {
    /// `(∇H, D²H)` at `x`, Hessian row-major.
    fn potential_derivs(potential: Potential, amplitude: f64, width: f64, x: &[f64], g: &mut [f64], h: &mut [f64]) {
        let d = x.len();
        match potential {
            Potential::Harmonic => {
                for i in 0..d {
                    g[i] = amplitude * x[i];
                    for j in 0..d {
                        h[i * d + j] = if i == j { amplitude } else { 0.0 };
                    }
                }
            }
            Potential::GaussianWell => {
                let w2 = width * width;
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let e = amplitude * (-r2 / w2).exp();
                for i in 0..d {
                    g[i] = -2.0 * x[i] / w2 * e;
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = (4.0 * x[i] * x[j] / (w2 * w2) - 2.0 * delta / w2) * e;
                    }
                }
            }
        }
    }

    /// `J v` with `J = [[0, I], [-I, 0]]`.
    fn apply_symplectic(v: &[f64], out: &mut [f64]) {
        let n = v.len() / 2;
        for i in 0..n {
            out[i] = v[n + i];
            out[n + i] = -v[i];
        }
    }

    fn tg_factor(&self, t: f64) -> f64 {
        match self {
            CatalogField::TaylorGreen { nu, horizon } => (-2.0 * nu * (horizon - t)).exp(),
            _ => 1.0,
        }
    }
}

impl DriftField for CatalogField {
    fn dim(&self) -> usize {
        match self {
            CatalogField::Zero { d } | CatalogField::Linear { d, .. } | CatalogField::Potential { d, .. } => *d,
            CatalogField::Constant { value } => value.len(),
            CatalogField::SmoothBump { center, .. } => center.len(),
            CatalogField::TaylorGreen { .. } => 2,
            CatalogField::Singular(s) => s.d,
        }
    }

    fn name(&self) -> String {
        match self {
            CatalogField::Zero { .. } => "zero".into(),
            CatalogField::Constant { .. } => "constant".into(),
            CatalogField::Linear { .. } => "linear".into(),
            CatalogField::SmoothBump { .. } => "smooth_bump".into(),
            CatalogField::Potential { potential, symplectic, .. } => {
                let p = match potential {
                    Potential::Harmonic => "harmonic",
                    Potential::GaussianWell => "gaussian_well",
                };
                if *symplectic {
                    format!("hamiltonian({p})")
                } else {
                    format!("gradient({p})")
                }
            }
            CatalogField::TaylorGreen { .. } => "taylor_green_backward".into(),
            CatalogField::Singular(_) => "truncated_singular".into(),
        }
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match self {
            CatalogField::Zero { .. } => out.fill(0.0),
            CatalogField::Constant { value } => out.copy_from_slice(value),
            CatalogField::Linear { d, matrix } => {
                for i in 0..*d {
                    out[i] = (0..*d).map(|j| matrix[i * d + j] * x[j]).sum();
                }
            }
            CatalogField::SmoothBump { amplitude, width, center, direction } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                let g = amplitude * (-r2 / (width * width)).exp();
                for (o, e) in out.iter_mut().zip(direction) {
                    *o = g * e;
                }
            }
            CatalogField::Potential { d, potential, amplitude, width, symplectic } => {
                let mut g = vec![0.0; *d];
                let mut h = vec![0.0; d * d];
                Self::potential_derivs(*potential, *amplitude, *width, x, &mut g, &mut h);
                if *symplectic {
                    Self::apply_symplectic(&g, out);
                } else {
                    out.copy_from_slice(&g);
                }
            }
            CatalogField::TaylorGreen { .. } => {
                let e = self.tg_factor(t);
                out[0] = e * x[0].sin() * x[1].cos();
                out[1] = -e * x[0].cos() * x[1].sin();
            }
            CatalogField::Singular(s) => {
                let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if rho == 0.0 {
                    out.fill(0.0);
                } else {
                    let (phi, _) = s.phi(rho);
                    for (o, xi) in out.iter_mut().zip(x) {
                        *o = phi * xi / rho;
                    }
                }
            }
        }
    }

    fn has_grad(&self) -> bool {
        !matches!(self, CatalogField::Singular(_))
    }

    fn grad(&self, x: &[f64], t: f64, du: &mut [f64]) -> bool {
        match self {
            CatalogField::Zero { .. } | CatalogField::Constant { .. } => du.fill(0.0),
            CatalogField::Linear { matrix, .. } => du.copy_from_slice(matrix),
            CatalogField::SmoothBump { amplitude, width, center, direction } => {
                let d = center.len();
                let w2 = width * width;
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                let g = amplitude * (-r2 / w2).exp();
                for i in 0..d {
                    for j in 0..d {
                        du[i * d + j] = -2.0 * (x[j] - center[j]) / w2 * g * direction[i];
                    }
                }
            }
            CatalogField::Potential { d, potential, amplitude, width, symplectic } => {
                let d = *d;
                let mut g = vec![0.0; d];
                let mut h = vec![0.0; d * d];
                Self::potential_derivs(*potential, *amplitude, *width, x, &mut g, &mut h);
                if *symplectic {
                    let n = d / 2;
                    for j in 0..d {
                        for i in 0..n {
                            du[i * d + j] = h[(n + i) * d + j];
                            du[(n + i) * d + j] = -h[i * d + j];
                        }
                    }
                } else {
                    du.copy_from_slice(&h);
                }
            }
            CatalogField::TaylorGreen { .. } => {
                let e = self.tg_factor(t);
                let (sx, cx) = x[0].sin_cos();
                let (sy, cy) = x[1].sin_cos();
                du[0] = e * cx * cy;
                du[1] = -e * sx * sy;
                du[2] = e * sx * sy;
                du[3] = -e * cx * cy;
            }
            CatalogField::Singular(_) => return false,
        }
        true
    }

    fn eval_with_grad(&self, x: &[f64], t: f64, u: &mut [f64], du: &mut [f64]) -> bool {
        if let CatalogField::SmoothBump { amplitude, width, center, direction } = self {
            let d = center.len();
            let w2 = width * width;
            let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
            let g = amplitude * (-r2 / w2).exp();
            for i in 0..d {
                u[i] = g * direction[i];
                for j in 0..d {
                    du[i * d + j] = -2.0 * (x[j] - center[j]) / w2 * u[i];
                }
            }
            return true;
        }
        self.eval(x, t, u);
        self.grad(x, t, du)
    }

    fn divergence(&self, x: &[f64], t: f64) -> Option<f64> {
        match self {
            CatalogField::Zero { .. } | CatalogField::Constant { .. } | CatalogField::TaylorGreen { .. } => Some(0.0),
            CatalogField::Potential { symplectic: true, .. } => Some(0.0),
            CatalogField::Singular(_) => None,
            _ => {
                let d = self.dim();
                let mut du = vec![0.0; d * d];
                self.grad(x, t, &mut du);
                Some((0..d).map(|i| du[i * d + i]).sum())
            }
        }
    }

    fn support(&self) -> Support {
        match self {
            CatalogField::Zero { d } => Support::Bounded(BoxDomain::cube(*d, 0.0, 1.0)),
            CatalogField::Singular(s) => Support::Bounded(BoxDomain::centered_cube(s.d, s.radius)),
            _ => Support::Unbounded,
        }
    }

    fn is_divergence_free(&self) -> bool {
        match self {
            CatalogField::Zero { .. } | CatalogField::Constant { .. } | CatalogField::TaylorGreen { .. } => true,
            CatalogField::Potential { symplectic, .. } => *symplectic,
            CatalogField::Linear { d, matrix } => (0..*d).map(|i| matrix[i * d + i]).sum::<f64>() == 0.0,
            CatalogField::SmoothBump { .. } | CatalogField::Singular(_) => false,
        }
    }

    fn is_bounded(&self) -> bool {
        match self {
            CatalogField::Linear { matrix, .. } => matrix.iter().all(|v| *v == 0.0),
            CatalogField::Potential { potential, .. } => *potential == Potential::GaussianWell,
            _ => true,
        }
    }

    fn known_norm(&self, r: Exponent, q: Exponent, horizon: f64) -> Option<f64> {
        let tf = time_factor(q, horizon);
        match self {
            CatalogField::Zero { .. } => Some(0.0),
            CatalogField::Constant { value } => {
                let c = value.iter().map(|v| v * v).sum::<f64>().sqrt();
                match r {
                    Exponent::Infinite => Some(c * tf),
                    Exponent::Finite(_) => (c == 0.0).then_some(0.0),
                }
            }
            CatalogField::Linear { matrix, .. } => matrix.iter().all(|v| *v == 0.0).then_some(0.0),
            CatalogField::SmoothBump { amplitude, width, center, .. } => {
                let d = center.len() as f64;
                let a = amplitude.abs();
                Some(match r {
                    Exponent::Infinite => a * tf,
                    Exponent::Finite(r) => a * (PI * width * width / r).powf(d / (2.0 * r)) * tf,
                })
            }
            CatalogField::Potential { d, potential: Potential::GaussianWell, amplitude, width, .. } => {
                let a = amplitude.abs();
                let w = *width;
                Some(match r {
                    Exponent::Infinite => 2.0f64.sqrt() * a * (-0.5f64).exp() / w * tf,
                    Exponent::Finite(r) => {
                        let df = *d as f64;
                        let radial = 0.5 * gamma((r + df) / 2.0) * (w * w / r).powf((r + df) / 2.0);
                        (2.0 * a / (w * w)) * (sphere_area(*d) * radial).powf(1.0 / r) * tf
                    }
                })
            }
            CatalogField::Potential { .. } => None,
            CatalogField::TaylorGreen { nu, horizon: h } => match r {
                Exponent::Infinite => Some(time_factor_exp(2.0 * nu, q, horizon.min(*h))),
                Exponent::Finite(_) => None,
            },
            CatalogField::Singular(s) => Some(s.spatial_norm(r) * tf),
        }
    }

    fn vorticity(&self, x: &[f64], t: f64) -> Option<f64> {
        if self.dim() != 2 {
            return None;
        }
        match self {
            CatalogField::Singular(_) => None,
            CatalogField::TaylorGreen { .. } => Some(2.0 * self.tg_factor(t) * x[0].sin() * x[1].sin()),
            _ => {
                let mut du = [0.0; 4];
                self.grad(x, t, &mut du);
                Some(du[2] - du[1])
            }
        }
    }
}
