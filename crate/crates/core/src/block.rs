//! Simplex and block integrals over chains of heat-kernel derivatives.
//!
//! A block integral integrates `f_1(z_1, t_1) ... f_k(z_k, t_k)` against a
//! chain of kernels `p(z_1 - 0, t_1 - t_0)`, `∂p(z_2 - z_1, t_2 - t_1)`, ...
//! over ordered times `t_0 <= t_1 <= ... <= t_k <= t`, with the weight
//! `(t - t_k)^α`. Five chain layouts are supported, see [`BlockKind`].
//!
//! Monte Carlo draws the times uniformly on the simplex and the spatial chain
//! from the Gaussian factors; each derivative kernel enters as its Hermite
//! factor. Derivative links are symmetrized: type-1 links use the antithetic
//! difference, type-2 links the second difference against the centre value.
//! Both are unbiased and keep the variance bounded when a time gap shrinks.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::exponents::{Exponent, Exponents};
use crate::heat_kernel::{gaussian, hermite_factor, KernelSpec};
use crate::quad::{breakpoints, Rule};
use crate::rng::{fill_normals, stream_rng, uniform};
use crate::stats::Moments;

/// Samples per Monte Carlo batch; each batch owns one random stream.
pub const BATCH: usize = 4096;

/// Largest dimension handled by the Monte Carlo evaluator.
pub const MAX_DIM: usize = 4;

/// Uniform draws on `{t0 <= t_1 <= ... <= t_n <= t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexSamples {
    pub n: usize,
    /// Flat `count x n`, each row sorted.
    pub times: Vec<f64>,
    /// `(t - t0)^n / n!`.
    pub volume: f64,
}

impl SimplexSamples {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.times[i * self.n..(i + 1) * self.n]
    }

    pub fn count(&self) -> usize {
        self.times.len().checked_div(self.n).unwrap_or(0)
    }
}

pub fn simplex_volume(n: usize, t0: f64, t: f64) -> f64 {
    ((n as f64) * (t - t0).ln() - ln_gamma(n as f64 + 1.0)).exp()
}

fn sample_sorted(rng: &mut impl rand::RngCore, t0: f64, t: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = t0 + (t - t0) * uniform(rng);
    }
    out.sort_unstable_by(f64::total_cmp);
}

/// `count` uniform points of the ordered simplex, by sorting uniforms.
pub fn simplex_sample(n: usize, t0: f64, t: f64, count: usize, seed: u64) -> Result<SimplexSamples> {
    if !(t > t0) {
        return Err(Error::EmptyWindow { t0, t });
    }
    if n == 0 || count == 0 {
        return Err(Error::InvalidParameter("simplex order and sample count must be positive".into()));
    }
    let batches = count.div_ceil(BATCH);
    let chunks: Vec<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let m = BATCH.min(count - b * BATCH);
            let mut rng = stream_rng(seed, b as u64);
            let mut out = vec![0.0; m * n];
            out.chunks_mut(n).for_each(|row| sample_sorted(&mut rng, t0, t, row));
            out
        })
        .collect();
    Ok(SimplexSamples { n, times: chunks.concat(), volume: simplex_volume(n, t0, t) })
}

/// Outcome of the Beta-Gamma identity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaCheck {
    pub n: usize,
    pub alphas: Vec<f64>,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub relative_error: f64,
}

/// `(t - t0)^{Σα - 1} ∏Γ(α_i) / Γ(Σα)`.
pub fn beta_rhs(alphas: &[f64], t0: f64, t: f64) -> f64 {
    let sum: f64 = alphas.iter().sum();
    let log = (sum - 1.0) * (t - t0).ln() + alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(sum);
    log.exp()
}

fn validate_alphas(n: usize, alphas: &[f64], t0: f64, t: f64) -> Result<()> {
    if alphas.len() != n + 1 {
        return Err(Error::InvalidParameter(format!("need {} exponents, got {}", n + 1, alphas.len())));
    }
    if let Some((index, &value)) = alphas.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
        return Err(Error::NonpositiveAlpha { index, value });
    }
    if !(t > t0) {
        return Err(Error::EmptyWindow { t0, t });
    }
    Ok(())
}

/// Monte Carlo estimate of `∫ ∏_{i=0}^{n} (t_{i+1} - t_i)^{α_i - 1}` over
/// `t0 <= t_1 <= ... <= t_n <= t_{n+1} = t`, against the Gamma closed form.
///
/// Gaps are drawn from a Dirichlet law with parameters `κ_i = 3 α_i / 4`
/// and reweighted by the bounded factor `∏ g_i^{α_i / 4}`; uniform draws
/// have infinite variance once two exponents are 1/2.
pub fn beta_identity_check(n: usize, alphas: &[f64], t0: f64, t: f64, samples: usize, seed: u64) -> Result<BetaCheck> {
    validate_alphas(n, alphas, t0, t)?;
    if n == 0 || samples == 0 {
        return Err(Error::InvalidParameter("order and sample count must be positive".into()));
    }
    let len = t - t0;
    let kappas: Vec<f64> = alphas.iter().map(|a| 0.75 * a).collect();
    let k_sum: f64 = kappas.iter().sum();
    let log_norm = kappas.iter().map(|&k| ln_gamma(k)).sum::<f64>() - ln_gamma(k_sum) + (k_sum - 1.0) * len.ln();
    let gammas = kappas
        .iter()
        .map(|&k| rand_distr::Gamma::new(k, 1.0).map_err(|e| Error::InvalidParameter(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let batches = samples.div_ceil(BATCH);
    let moments: Vec<Moments> = (0..batches)
        .into_par_iter()
        .map(|b| {
            use rand::distr::Distribution;
            let m = BATCH.min(samples - b * BATCH);
            let mut rng = stream_rng(seed, b as u64);
            let mut g = vec![0.0; n + 1];
            let mut acc = Moments::default();
            for _ in 0..m {
                g.iter_mut().zip(&gammas).for_each(|(v, dist)| *v = dist.sample(&mut rng));
                let total: f64 = g.iter().sum();
                let log_w: f64 = g.iter().zip(alphas).map(|(gi, a)| 0.25 * a * (len * gi / total).ln()).sum();
                acc.push((log_w + log_norm).exp());
            }
            acc
        })
        .collect();
    let est = moments.into_iter().fold(Moments::default(), Moments::merge).mean_se();
    let rhs = beta_rhs(alphas, t0, t);
    Ok(BetaCheck { n, alphas: alphas.to_vec(), lhs: est.mean, lhs_se: est.se, rhs, relative_error: (est.mean - rhs).abs() / rhs })
}

/// Cosine-mapped Gauss-Legendre nodes on `[a, b]`; the map clusters nodes
/// at both ends and absorbs integrable endpoint singularities.
fn cosine_nodes(rule: &Rule, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    rule.mapped(0.0, 1.0).map(move |(th, w)| {
        let x = a + (b - a) * (1.0 - (PI * th).cos()) / 2.0;
        (x, w * (b - a) * PI / 2.0 * (PI * th).sin())
    })
}

/// Recursive 1-D quadrature of the same integral for `n <= 2`.
pub fn beta_identity_quadrature(n: usize, alphas: &[f64], t0: f64, t: f64, nodes: usize) -> Result<BetaCheck> {
    validate_alphas(n, alphas, t0, t)?;
    if n == 0 || n > 2 {
        return Err(Error::SizeCap(format!("quadrature route needs n in 1..=2, got {n}")));
    }
    let rule = Rule::new(nodes);
    let lhs = if n == 1 {
        cosine_nodes(&rule, t0, t).map(|(t1, w)| w * (t1 - t0).powf(alphas[0] - 1.0) * (t - t1).powf(alphas[1] - 1.0)).sum()
    } else {
        cosine_nodes(&rule, t0, t)
            .map(|(t1, w1)| {
                let inner: f64 =
                    cosine_nodes(&rule, t1, t).map(|(t2, w2)| w2 * (t2 - t1).powf(alphas[1] - 1.0) * (t - t2).powf(alphas[2] - 1.0)).sum();
                w1 * (t1 - t0).powf(alphas[0] - 1.0) * inner
            })
            .sum()
    };
    let rhs = beta_rhs(alphas, t0, t);
    Ok(BetaCheck { n, alphas: alphas.to_vec(), lhs, lhs_se: 0.0, rhs, relative_error: (lhs - rhs).abs() / rhs })
}

/// Spatial profile of an integrand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Zero,
    Constant,
    /// `c · z`.
    Linear {
        coef: Vec<f64>,
    },
    /// `exp(-|z - c|^2 / w^2)`.
    Bump {
        center: Vec<f64>,
        width: f64,
    },
    /// `z_axis exp(-|z|^2 / w^2)`.
    OddBump {
        axis: usize,
        width: f64,
    },
    /// Indicator of the box `[lower, upper]`.
    Plateau {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// `|z|^m` on `|z| <= cutoff`, zero outside.
    Power {
        exponent: f64,
        cutoff: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// `f(z, t) = amplitude · exp(-time_decay · t) · shape(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integrand {
    pub shape: Shape,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub time_decay: f64,
}

impl Integrand {
    pub fn new(shape: Shape) -> Self {
        Integrand { shape, amplitude: 1.0, time_decay: 0.0 }
    }

    pub fn zero() -> Self {
        Self::new(Shape::Zero)
    }

    pub fn constant(c: f64) -> Self {
        Integrand { amplitude: c, ..Self::new(Shape::Constant) }
    }

    pub fn linear(coef: Vec<f64>) -> Self {
        Self::new(Shape::Linear { coef })
    }

    pub fn bump(center: Vec<f64>, width: f64) -> Self {
        Self::new(Shape::Bump { center, width })
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.amplitude *= factor;
        self
    }

    pub fn with_decay(mut self, rate: f64) -> Self {
        self.time_decay = rate;
        self
    }

    pub fn eval(&self, z: &[f64], t: f64) -> f64 {
        let s = match &self.shape {
            Shape::Zero => return 0.0,
            Shape::Constant => 1.0,
            Shape::Linear { coef } => coef.iter().zip(z).map(|(c, x)| c * x).sum(),
            Shape::Bump { center, width } => {
                let r2: f64 = z.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                (-r2 / (width * width)).exp()
            }
            Shape::OddBump { axis, width } => {
                let r2: f64 = z.iter().map(|x| x * x).sum();
                z[*axis] * (-r2 / (width * width)).exp()
            }
            Shape::Plateau { lower, upper } => {
                let inside = z.iter().zip(lower.iter().zip(upper)).all(|(x, (l, u))| *x >= *l && *x <= *u);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Shape::Power { exponent, cutoff } => {
                let r = z.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r <= *cutoff {
                    r.powf(*exponent)
                } else {
                    0.0
                }
            }
        };
        let decay = if self.time_decay == 0.0 { 1.0 } else { (-self.time_decay * t).exp() };
        self.amplitude * decay * s
    }

    /// Points where the 1-D profile is not smooth.
    pub fn kinks_1d(&self) -> Vec<f64> {
        match &self.shape {
            Shape::Plateau { lower, upper } => vec![lower[0], upper[0]],
            Shape::Power { cutoff, .. } => vec![-cutoff, 0.0, *cutoff],
            _ => Vec::new(),
        }
    }

    /// True when the profile is constant in space.
    pub fn is_spatially_constant(&self) -> bool {
        matches!(self.shape, Shape::Zero | Shape::Constant) || self.amplitude == 0.0
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let ok = match &self.shape {
            Shape::Linear { coef } => coef.len() == d,
            Shape::Bump { center, width } => center.len() == d && *width > 0.0,
            Shape::OddBump { axis, width } => *axis < d && *width > 0.0,
            Shape::Plateau { lower, upper } => lower.len() == d && upper.len() == d,
            Shape::Power { cutoff, .. } => *cutoff > 0.0,
            Shape::Zero | Shape::Constant => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MalformedBlock(format!("integrand {:?} does not fit d = {d}", self.shape)))
        }
    }
}

/// Chain layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// One integrand against a type-1 kernel.
    I1,
    /// `k >= 2` integrands: type-0 lead, `k - 2` type-1 links, type-2 end.
    Ik,
    /// Two integrands, widened type-0 lead `p(z, 2 t_1)`, type-2 end and an
    /// extra weight `t_1^β`.
    Iprime,
    /// `ℓ` integrands, type-1 links throughout, ending at a fixed point.
    J,
    /// Two integrands with a type-1 lead and a type-2 end.
    K,
}

/// `(r, q)` class of the integrands, used for the exponent budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularity {
    pub r: Exponent,
    pub q: Exponent,
}

/// Full description of one block integral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockIntegralSpec {
    pub kind: BlockKind,
    pub d: usize,
    pub nu: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub t0: f64,
    pub t: f64,
    pub integrands: Vec<Integrand>,
    /// Derivative indices of every derivative kernel in chain order.
    pub kernel_derivs: Vec<Vec<usize>>,
    /// Terminal point of a [`BlockKind::J`] chain, reached at time `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularity: Option<Regularity>,
}

#[derive(Clone, Debug)]
struct Link {
    kernel: KernelSpec,
    /// Multiplier on the time gap of the Gaussian (2 for the widened lead).
    widen: f64,
}

impl Link {
    fn order(&self) -> usize {
        self.kernel.type_order()
    }
}

impl BlockIntegralSpec {
    /// Number of integrands.
    pub fn len(&self) -> usize {
        self.integrands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.integrands.is_empty()
    }

    /// Same spec with a different upper time.
    pub fn with_window(&self, t0: f64, t: f64) -> Self {
        BlockIntegralSpec { t0, t, ..self.clone() }
    }

    /// Predicted power of `t - t0` in the corresponding bound, given the
    /// integrability class.
    pub fn predicted_slope(&self, exps: &Exponents) -> f64 {
        let k = self.len() as f64;
        let (d1, d2) = (exps.delta1(), exps.delta2());
        match self.kind {
            BlockKind::I1 | BlockKind::Ik => self.alpha + k * d1,
            BlockKind::Iprime => self.alpha + self.beta + 2.0 * d1,
            BlockKind::K => self.alpha + 2.0 * d2,
            BlockKind::J => k * d1,
        }
    }

    fn links(&self) -> Result<Vec<Link>> {
        let d = self.d;
        if d == 0 {
            return Err(Error::MalformedBlock("dimension must be positive".into()));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::MalformedBlock(format!("nu = {} must be positive", self.nu)));
        }
        if !(self.t > self.t0) {
            return Err(Error::EmptyWindow { t0: self.t0, t: self.t });
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::SingularWeight(format!(
                "weights (t - t_k)^{} and t_1^{} are not integrable against the chain",
                self.alpha, self.beta
            )));
        }
        for f in &self.integrands {
            f.check_dim(d)?;
        }
        let k = self.len();
        let orders: Vec<usize> = self.kernel_derivs.iter().map(Vec::len).collect();
        let (want, lead): (Vec<usize>, Option<f64>) = match self.kind {
            BlockKind::I1 => {
                expect(k == 1, "I1 takes exactly one integrand")?;
                (vec![1], None)
            }
            BlockKind::Ik => {
                expect(k >= 2, "Ik takes at least two integrands")?;
                let mut w = vec![1; k - 2];
                w.push(2);
                (w, Some(1.0))
            }
            BlockKind::Iprime => {
                expect(k == 2, "Iprime takes exactly two integrands")?;
                (vec![2], Some(2.0))
            }
            BlockKind::K => {
                expect(k == 2, "K takes exactly two integrands")?;
                (vec![1, 2], None)
            }
            BlockKind::J => {
                expect(k >= 1, "J takes at least one integrand")?;
                let ok = self.endpoint.as_ref().is_some_and(|e| e.len() == d);
                expect(ok, "J needs an endpoint of dimension d")?;
                (vec![1; k], None)
            }
        };
        if orders != want {
            return Err(Error::MalformedBlock(format!(
                "{:?} with {k} integrands needs derivative kernels of types {want:?}, got {orders:?}",
                self.kind
            )));
        }
        if self.kind != BlockKind::J && self.endpoint.is_some() {
            return Err(Error::MalformedBlock("only J chains take an endpoint".into()));
        }
        if let Some(reg) = self.regularity {
            let exps = Exponents::new(d, reg.r, reg.q, (2.0 * self.nu).sqrt())?;
            let budget = self.predicted_slope(&exps) - self.alpha - self.beta;
            if budget <= 0.0 {
                return Err(Error::SingularWeight(format!("exponent budget {budget} is not positive for (r, q) = ({}, {})", reg.r, reg.q)));
            }
        }
        let mut links = Vec::with_capacity(k);
        if let Some(widen) = lead {
            links.push(Link { kernel: KernelSpec::new(d, self.nu, vec![])?, widen });
        }
        for deriv in &self.kernel_derivs {
            links.push(Link { kernel: KernelSpec::new(d, self.nu, deriv.clone())?, widen: 1.0 });
        }
        Ok(links)
    }

    /// Weight `(t - t_k)^α (t_1 - t_0)^β` for forward chains.
    fn time_weight(&self, first: f64, last: f64) -> f64 {
        let mut w = 1.0;
        if self.alpha != 0.0 {
            w *= (self.t - last).powf(self.alpha);
        }
        if self.beta != 0.0 {
            w *= (first - self.t0).powf(self.beta);
        }
        w
    }
}

fn expect(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::MalformedBlock(msg.into()))
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

struct Sample<'a> {
    spec: &'a BlockIntegralSpec,
    links: &'a [Link],
    times: &'a [f64],
    gaps: &'a [f64],
    xi: &'a [[f64; MAX_DIM]],
}

impl Sample<'_> {
    fn shift(z: &[f64; MAX_DIM], xi: &[f64; MAX_DIM], sign: f64, d: usize) -> [f64; MAX_DIM] {
        let mut out = *z;
        for i in 0..d {
            out[i] += sign * xi[i];
        }
        out
    }

    /// `f_level(z) ·` downstream value.
    fn value_forward(&self, level: usize, z: &[f64; MAX_DIM]) -> f64 {
        let d = self.spec.d;
        let f = self.spec.integrands[level].eval(&z[..d], self.times[level]);
        if f == 0.0 {
            return 0.0;
        }
        if level + 1 == self.links.len() {
            f
        } else {
            f * self.forward(level + 1, z)
        }
    }

    fn forward(&self, level: usize, zprev: &[f64; MAX_DIM]) -> f64 {
        let d = self.spec.d;
        let link = &self.links[level];
        let xi = &self.xi[level];
        let plus = Self::shift(zprev, xi, 1.0, d);
        match link.order() {
            0 => self.value_forward(level, &plus),
            1 => {
                let h = hermite_factor(&link.kernel, &xi[..d], self.gaps[level]);
                let minus = Self::shift(zprev, xi, -1.0, d);
                0.5 * h * (self.value_forward(level, &plus) - self.value_forward(level, &minus))
            }
            _ => {
                let h = hermite_factor(&link.kernel, &xi[..d], self.gaps[level]);
                let minus = Self::shift(zprev, xi, -1.0, d);
                let centre = self.value_forward(level, zprev);
                h * (0.5 * (self.value_forward(level, &plus) + self.value_forward(level, &minus)) - centre)
            }
        }
    }

    /// Backward chain for J: `level` indexes the variable `z_{level + 1}`
    /// being produced from `z_{level + 2}`.
    fn backward(&self, level: usize, znext: &[f64; MAX_DIM]) -> f64 {
        let d = self.spec.d;
        let link = &self.links[level];
        let xi = &self.xi[level];
        let h = hermite_factor(&link.kernel, &xi[..d], self.gaps[level + 1]);
        let down = Self::shift(znext, xi, -1.0, d);
        let up = Self::shift(znext, xi, 1.0, d);
        0.5 * h * (self.value_backward(level, &down) - self.value_backward(level, &up))
    }

    fn value_backward(&self, level: usize, z: &[f64; MAX_DIM]) -> f64 {
        let d = self.spec.d;
        let f = self.spec.integrands[level].eval(&z[..d], self.times[level]);
        if f == 0.0 {
            return 0.0;
        }
        if level == 0 {
            f * gaussian(d, self.spec.nu, &z[..d], self.gaps[0])
        } else {
            f * self.backward(level - 1, z)
        }
    }
}

/// Monte Carlo evaluation of a block integral.
pub fn evaluate_block(spec: &BlockIntegralSpec, samples: usize, seed: u64) -> Result<BlockEstimate> {
    let links = spec.links()?;
    if spec.d > MAX_DIM {
        return Err(Error::SizeCap(format!("Monte Carlo chains support d <= {MAX_DIM}")));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    if spec.integrands.iter().any(|f| matches!(f.shape, Shape::Zero) || f.amplitude == 0.0) {
        return Ok(BlockEstimate { estimate: 0.0, std_error: 0.0, samples });
    }
    let k = spec.len();
    let d = spec.d;
    let backward = spec.kind == BlockKind::J;
    let vol = simplex_volume(k, spec.t0, spec.t);
    let batches = samples.div_ceil(BATCH);
    let moments: Vec<Moments> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let m = BATCH.min(samples - b * BATCH);
            let mut rng = stream_rng(seed, b as u64);
            let mut times = vec![0.0; k];
            // gaps[i] = t_i - t_{i-1}; J also stores gaps[k] = t - t_k
            let mut gaps = vec![0.0; k + 1];
            let mut xi = vec![[0.0; MAX_DIM]; k];
            let mut normals = [0.0; MAX_DIM];
            let mut acc = Moments::default();
            for _ in 0..m {
                sample_sorted(&mut rng, spec.t0, spec.t, &mut times);
                let mut prev = spec.t0;
                for i in 0..k {
                    gaps[i] = times[i] - prev;
                    prev = times[i];
                }
                gaps[k] = spec.t - prev;
                for i in 0..k {
                    fill_normals(&mut rng, &mut normals[..d]);
                    let (gap, widen) = if backward { (gaps[i + 1], 1.0) } else { (gaps[i], links[i].widen) };
                    let sd = (2.0 * spec.nu * widen * gap).sqrt();
                    for j in 0..d {
                        xi[i][j] = sd * normals[j];
                    }
                }
                let s = Sample { spec, links: &links, times: &times, gaps: &gaps, xi: &xi };
                let value = if backward {
                    let mut end = [0.0; MAX_DIM];
                    end[..d].copy_from_slice(spec.endpoint.as_deref().unwrap_or(&[]));
                    s.backward(k - 1, &end)
                } else {
                    s.forward(0, &[0.0; MAX_DIM]) * spec.time_weight(times[0], times[k - 1])
                };
                acc.push(vol * value);
            }
            acc
        })
        .collect();
    let est = moments.into_iter().fold(Moments::default(), Moments::merge).mean_se();
    Ok(BlockEstimate { estimate: est.mean, std_error: est.se, samples })
}

/// Resolution of the deterministic evaluator: Gauss-Legendre nodes per time
/// level and per spatial panel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetGrid {
    pub time_nodes: usize,
    pub space_order: usize,
}

impl Default for DetGrid {
    fn default() -> Self {
        DetGrid { time_nodes: 10, space_order: 5 }
    }
}

/// Deterministic value with `|fine - coarse|` as error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetEstimate {
    pub estimate: f64,
    pub error: f64,
}

/// Multiples of the kernel standard deviation used as panel edges.
const PANEL_EDGES: [f64; 8] = [0.0, 0.5, 1.0, 2.0, 3.0, 4.5, 6.0, 8.5];

struct Nested<'a> {
    spec: &'a BlockIntegralSpec,
    links: &'a [Link],
    time_rule: Rule,
    space_rule: Rule,
}

impl Nested<'_> {
    /// Half-line panel edges in the increment variable.
    fn half_edges(sd: f64, centre: f64, kinks: &[f64], extra: &[f64]) -> Vec<f64> {
        let hi = PANEL_EDGES[PANEL_EDGES.len() - 1] * sd;
        let interior = PANEL_EDGES.iter().map(|m| m * sd).chain(kinks.iter().map(|k| (k - centre).abs())).chain(extra.iter().copied());
        breakpoints(0.0, hi, interior)
    }

    fn value_forward(&self, level: usize, z: f64, times: &mut [f64]) -> f64 {
        let f = self.spec.integrands[level].eval(&[z], times[level]);
        if f == 0.0 {
            return 0.0;
        }
        if level + 1 == self.links.len() {
            f * self.spec.time_weight(times[0], times[level])
        } else {
            f * self.forward(level + 1, z, times)
        }
    }

    fn forward(&self, level: usize, zprev: f64, times: &mut [f64]) -> f64 {
        let lo = if level == 0 { self.spec.t0 } else { times[level - 1] };
        let link = &self.links[level];
        let kinks = self.spec.integrands[level].kinks_1d();
        let mut total = 0.0;
        for (tl, wt) in cosine_nodes(&self.time_rule, lo, self.spec.t) {
            times[level] = tl;
            let gap = link.widen * (tl - lo);
            let sd = (2.0 * self.spec.nu * gap).sqrt();
            let edges = Self::half_edges(sd, zprev, &kinks, &[]);
            let mut inner = 0.0;
            for w in edges.windows(2) {
                for (xi, wx) in self.space_rule.mapped(w[0], w[1]) {
                    let p = gaussian(1, self.spec.nu, &[xi], gap);
                    let v = match link.order() {
                        0 => self.value_forward(level, zprev + xi, times) + self.value_forward(level, zprev - xi, times),
                        1 => {
                            let h = hermite_factor(&link.kernel, &[xi], gap);
                            h * (self.value_forward(level, zprev + xi, times) - self.value_forward(level, zprev - xi, times))
                        }
                        _ => {
                            let h = hermite_factor(&link.kernel, &[xi], gap);
                            let c = self.value_forward(level, zprev, times);
                            h * (self.value_forward(level, zprev + xi, times) + self.value_forward(level, zprev - xi, times) - 2.0 * c)
                        }
                    };
                    inner += wx * p * v;
                }
            }
            total += wt * inner;
        }
        total
    }

    /// J chain: integrates `z_{level + 1}` at time `t_{level + 1}` below
    /// `(znext, tnext)`.
    fn backward(&self, level: usize, znext: f64, tnext: f64, times: &mut [f64]) -> f64 {
        let link = &self.links[level];
        let kinks = self.spec.integrands[level].kinks_1d();
        let mut total = 0.0;
        for (tl, wt) in cosine_nodes(&self.time_rule, self.spec.t0, tnext) {
            times[level] = tl;
            let gap = tnext - tl;
            let sd = (2.0 * self.spec.nu * gap).sqrt();
            let extra: Vec<f64> = if level == 0 {
                let sd1 = (2.0 * self.spec.nu * (tl - self.spec.t0)).sqrt();
                PANEL_EDGES.iter().flat_map(|m| [(znext - m * sd1).abs(), (znext + m * sd1).abs()]).collect()
            } else {
                Vec::new()
            };
            let edges = Self::half_edges(sd, znext, &kinks, &extra);
            let mut inner = 0.0;
            for w in edges.windows(2) {
                for (xi, wx) in self.space_rule.mapped(w[0], w[1]) {
                    let p = gaussian(1, self.spec.nu, &[xi], gap);
                    let h = hermite_factor(&link.kernel, &[xi], gap);
                    let down = self.value_backward(level, znext - xi, times);
                    let up = self.value_backward(level, znext + xi, times);
                    inner += wx * p * h * (down - up);
                }
            }
            total += wt * inner;
        }
        total
    }

    fn value_backward(&self, level: usize, z: f64, times: &mut [f64]) -> f64 {
        let f = self.spec.integrands[level].eval(&[z], times[level]);
        if f == 0.0 {
            return 0.0;
        }
        if level == 0 {
            f * gaussian(1, self.spec.nu, &[z], times[0] - self.spec.t0)
        } else {
            let t = times[level];
            f * self.backward(level - 1, z, t, times)
        }
    }

    fn run(&self) -> f64 {
        let k = self.spec.len();
        let mut times = vec![0.0; k];
        if self.spec.kind == BlockKind::J {
            let end = self.spec.endpoint.as_ref().map_or(0.0, |e| e[0]);
            self.backward(k - 1, end, self.spec.t, &mut times)
        } else {
            self.forward(0, 0.0, &mut times)
        }
    }
}

/// Nested Gauss-Legendre evaluation for `d = 1` and chains of length <= 3.
///
/// Times use a cosine-mapped rule on every level; space uses panels at
/// multiples of the kernel width around each kernel centre plus the kinks of
/// the integrand.
pub fn evaluate_block_deterministic(spec: &BlockIntegralSpec, grid: DetGrid) -> Result<DetEstimate> {
    let links = spec.links()?;
    if spec.d != 1 || spec.len() > 3 {
        return Err(Error::SizeCap(format!("d = {}, chain length {}", spec.d, spec.len())));
    }
    if grid.time_nodes < 2 || grid.space_order < 2 {
        return Err(Error::InvalidParameter("deterministic grid needs at least 2 nodes per level".into()));
    }
    let run = |g: DetGrid| Nested { spec, links: &links, time_rule: Rule::new(g.time_nodes), space_rule: Rule::new(g.space_order) }.run();
    let fine = run(grid);
    let coarse = run(DetGrid { time_nodes: grid.time_nodes.div_ceil(2).max(2), space_order: grid.space_order.div_ceil(2).max(2) });
    Ok(DetEstimate { estimate: fine, error: (fine - coarse).abs() })
}

/// How a scaling fit evaluates each window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum FitMethod {
    Deterministic { grid: DetGrid },
    MonteCarlo { samples: usize, seed: u64 },
}

/// Log-log fit of `|I|` against the window length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub lengths: Vec<f64>,
    pub estimates: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    pub expected: f64,
}

/// Evaluates `base` over windows `[t0, t0 + L]` and fits the slope of
/// `log |I|` against `log L`.
pub fn scaling_exponent_fit(base: &BlockIntegralSpec, lengths: &[f64], expected: f64, method: FitMethod) -> Result<ScalingFit> {
    if lengths.len() < 2 {
        return Err(Error::InsufficientData("scaling fit needs at least two window lengths".into()));
    }
    let mut estimates = Vec::with_capacity(lengths.len());
    let mut errors = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let spec = base.with_window(base.t0, base.t0 + len);
        let (est, err) = match method {
            FitMethod::Deterministic { grid } => {
                let e = evaluate_block_deterministic(&spec, grid)?;
                (e.estimate, e.error)
            }
            FitMethod::MonteCarlo { samples, seed } => {
                let e = evaluate_block(&spec, samples, seed)?;
                if e.estimate.abs() <= 2.0 * e.std_error {
                    return Err(Error::IndistinguishableFromZero { t: spec.t, estimate: e.estimate, std_error: e.std_error });
                }
                (e.estimate, e.std_error)
            }
        };
        if est == 0.0 {
            return Err(Error::IndistinguishableFromZero { t: spec.t, estimate: est, std_error: err });
        }
        estimates.push(est);
        errors.push(err);
    }
    let lx: Vec<f64> = lengths.iter().map(|l| l.ln()).collect();
    let ly: Vec<f64> = estimates.iter().map(|e| e.abs().ln()).collect();
    let (slope, intercept) = crate::heat_kernel::linear_fit(&lx, &ly);
    let max_residual = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    Ok(ScalingFit { lengths: lengths.to_vec(), estimates, errors, slope, intercept, max_residual, expected })
}

/// One-dimensional specs with nontrivial sign structure, used to compare the
/// Monte Carlo and deterministic evaluators.
pub fn sign_structured_catalog(nu: f64) -> Vec<(&'static str, BlockIntegralSpec)> {
    let spec = |kind, integrands: Vec<Integrand>, derivs: Vec<Vec<usize>>| BlockIntegralSpec {
        kind,
        d: 1,
        nu,
        alpha: 0.0,
        beta: 0.0,
        t0: 0.0,
        t: 1.0,
        integrands,
        kernel_derivs: derivs,
        endpoint: None,
        regularity: None,
    };
    let bump = |c: f64, w: f64| Integrand::bump(vec![c], w);
    let odd = |w: f64| Integrand::new(Shape::OddBump { axis: 0, width: w });
    vec![
        ("i1_linear", spec(BlockKind::I1, vec![Integrand::linear(vec![1.0])], vec![vec![0]])),
        ("i1_shifted_bump", BlockIntegralSpec { alpha: 0.5, ..spec(BlockKind::I1, vec![bump(0.3, 0.8)], vec![vec![0]]) }),
        ("i1_odd_decaying", spec(BlockKind::I1, vec![odd(1.0).with_decay(0.7)], vec![vec![0]])),
        ("i2_bumps", spec(BlockKind::Ik, vec![bump(0.2, 0.7), bump(-0.3, 0.9)], vec![vec![0, 0]])),
        ("i2_odd_then_bump", BlockIntegralSpec { alpha: 1.0, ..spec(BlockKind::Ik, vec![odd(1.2), bump(0.4, 0.6)], vec![vec![0, 0]]) }),
        ("i3_bumps", spec(BlockKind::Ik, vec![bump(0.1, 0.8), bump(0.3, 1.0), bump(-0.2, 0.7)], vec![vec![0], vec![0, 0]])),
        ("k_linear_bump", spec(BlockKind::K, vec![Integrand::linear(vec![1.0]), bump(0.2, 0.8)], vec![vec![0], vec![0, 0]])),
        (
            "k_bumps",
            BlockIntegralSpec { alpha: 0.5, ..spec(BlockKind::K, vec![bump(0.5, 0.9), bump(-0.1, 0.7)], vec![vec![0], vec![0, 0]]) },
        ),
        (
            "iprime_bumps",
            BlockIntegralSpec { alpha: 0.5, beta: 0.5, ..spec(BlockKind::Iprime, vec![bump(0.2, 0.8), bump(-0.2, 0.6)], vec![vec![0, 0]]) },
        ),
        ("j1_bump", BlockIntegralSpec { endpoint: Some(vec![0.4]), ..spec(BlockKind::J, vec![bump(0.1, 0.8)], vec![vec![0]]) }),
        (
            "j2_bumps",
            BlockIntegralSpec {
                endpoint: Some(vec![0.3]),
                ..spec(BlockKind::J, vec![bump(0.0, 0.9), bump(0.5, 0.8)], vec![vec![0], vec![0]])
            },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn i1(f: Integrand) -> BlockIntegralSpec {
        BlockIntegralSpec {
            kind: BlockKind::I1,
            d: 1,
            nu: 0.5,
            alpha: 0.0,
            beta: 0.0,
            t0: 0.0,
            t: 1.0,
            integrands: vec![f],
            kernel_derivs: vec![vec![0]],
            endpoint: None,
            regularity: None,
        }
    }

    #[test]
    fn simplex_samples_are_ordered_and_uniform() {
        let s = simplex_sample(3, 0.5, 2.0, 5000, 1).unwrap();
        assert_eq!(s.count(), 5000);
        assert!((0..s.count()).all(|i| s.row(i).windows(2).all(|w| w[0] <= w[1])));
        assert!((s.volume - 1.5f64.powi(3) / 6.0).abs() < 1e-14);
        let s = simplex_sample(2, 0.0, 3.0, 20_000, 9).unwrap();
        let firsts: Vec<f64> = (0..s.count()).map(|i| s.row(i)[0]).collect();
        let m = crate::stats::mean_se(&firsts);
        assert!((m.mean - 1.0).abs() < 3.0 * m.se);
        assert!(matches!(simplex_sample(1, 1.0, 1.0, 10, 0), Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn beta_identity_examples() {
        assert!((beta_rhs(&[1.0, 1.0], 0.0, 2.5) - 2.5).abs() < 1e-12);
        assert!((beta_rhs(&[0.5, 0.5], 0.0, 1.0) - PI).abs() < 1e-12);
        assert!((beta_rhs(&[1.0, 1.0, 1.0], 0.0, 1.0) - 0.5).abs() < 1e-12);
        let c = beta_identity_check(1, &[1.0, 1.0], 0.0, 2.5, 20_000, 3).unwrap();
        assert!((c.lhs - 2.5).abs() < 4.0 * c.lhs_se, "{c:?}");
        let c = beta_identity_check(2, &[0.5, 0.5, 0.5], 0.0, 1.0, 20_000, 4).unwrap();
        assert!((c.lhs - c.rhs).abs() < 4.0 * c.lhs_se, "{c:?}");
        let q = beta_identity_quadrature(2, &[0.5, 2.0, 0.5], 0.0, 1.3, 40).unwrap();
        assert!(q.relative_error < 1e-6, "{q:?}");
        assert!(matches!(beta_identity_check(1, &[1.0, 0.0], 0.0, 1.0, 10, 0), Err(Error::NonpositiveAlpha { index: 1, .. })));
    }

    #[test]
    fn zero_and_constant_integrands_vanish() {
        let e = evaluate_block(&i1(Integrand::zero()), 1000, 1).unwrap();
        assert_eq!(e.estimate, 0.0);
        let e = evaluate_block(&i1(Integrand::constant(2.0)), 1000, 1).unwrap();
        assert_eq!(e.estimate, 0.0);
        let mut k = sign_structured_catalog(0.5).into_iter().find(|(n, _)| *n == "k_linear_bump").unwrap().1;
        k.integrands[1] = Integrand::constant(1.0);
        assert_eq!(evaluate_block(&k, 1000, 2).unwrap().estimate, 0.0);
        assert!(evaluate_block_deterministic(&k, DetGrid::default()).unwrap().estimate.abs() < 1e-12);
    }

    #[test]
    fn linear_integrand_integrates_by_parts() {
        let e = evaluate_block(&i1(Integrand::linear(vec![1.0])), 100_000, 5).unwrap();
        assert!((e.estimate + 1.0).abs() < 2.0 * e.std_error + 1e-3, "{e:?}");
        let det = evaluate_block_deterministic(&i1(Integrand::linear(vec![1.0])), DetGrid::default()).unwrap();
        assert!((det.estimate + 1.0).abs() < 1e-8, "{det:?}");
    }

    #[test]
    fn estimator_is_linear() {
        let f = Integrand::bump(vec![0.3], 0.8);
        let a = evaluate_block(&i1(f.clone()), 20_000, 4).unwrap();
        let b = evaluate_block(&i1(f.scaled(2.0)), 20_000, 4).unwrap();
        assert!((b.estimate - 2.0 * a.estimate).abs() < 1e-12);
    }

    #[test]
    fn malformed_specs_are_rejected() {
        let mut s = i1(Integrand::constant(1.0));
        s.kernel_derivs = vec![vec![0, 0]];
        assert!(matches!(evaluate_block(&s, 10, 0), Err(Error::MalformedBlock(_))));
        let mut s = i1(Integrand::constant(1.0));
        s.alpha = -0.5;
        assert!(matches!(evaluate_block(&s, 10, 0), Err(Error::SingularWeight(_))));
        let mut s = i1(Integrand::constant(1.0));
        s.t = 0.0;
        assert!(matches!(evaluate_block(&s, 10, 0), Err(Error::EmptyWindow { .. })));
        let mut k = sign_structured_catalog(0.5).into_iter().find(|(n, _)| *n == "k_bumps").unwrap().1;
        k.regularity = Some(Regularity { r: Exponent::Finite(4.0), q: Exponent::Finite(8.0) });
        // delta2 = 1/4 - 1/8 - 1/8 = 0
        assert!(matches!(evaluate_block(&k, 10, 0), Err(Error::SingularWeight(_))));
        let mut big = i1(Integrand::constant(1.0));
        big.d = 2;
        big.integrands = vec![Integrand::constant(1.0)];
        assert!(matches!(evaluate_block_deterministic(&big, DetGrid::default()), Err(Error::SizeCap(_))));
    }

    #[test]
    fn iprime_and_zero_integrands() {
        let mut s = sign_structured_catalog(0.5).into_iter().find(|(n, _)| *n == "iprime_bumps").unwrap().1;
        s.integrands = vec![Integrand::zero(), Integrand::zero()];
        assert_eq!(evaluate_block_deterministic(&s, DetGrid::default()).unwrap().estimate, 0.0);
    }

    #[test]
    fn plateau_integral_has_closed_form() {
        // ∫_0^t ∫ p_z 1_{[0, L]} = -∫_0^t (p(0, s) - p(L, s)) ds ≈ -√(t / (π ν))
        let nu = 0.5;
        let f = Integrand::new(Shape::Plateau { lower: vec![0.0], upper: vec![20.0] });
        let mut s = i1(f);
        s.nu = nu;
        let det = evaluate_block_deterministic(&s, DetGrid { time_nodes: 16, space_order: 8 }).unwrap();
        assert!((det.estimate + (1.0 / (PI * nu)).sqrt()).abs() < 1e-6, "{det:?}");
    }
}
