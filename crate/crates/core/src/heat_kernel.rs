//! Gaussian heat kernel `p(z, t) = (4πνt)^{-d/2} exp(-|z|^2 / (4νt))` and its
//! first and second spatial derivatives.
//!
//! The kernel is the transition density of `a + σB(t)` with `σ = √(2ν)`, so
//! each coordinate has variance `2νt`. Every other module evaluates kernels
//! through this one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::Exponent;
use crate::quad::{breakpoints, refine, Rule};

/// A kernel `∂_{i_1} ... ∂_{i_j} p` of type `j = deriv.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub d: usize,
    pub nu: f64,
    pub deriv: Vec<usize>,
}

impl KernelSpec {
    pub fn new(d: usize, nu: f64, deriv: Vec<usize>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("kernel dimension must be positive".into()));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel scale nu = {nu} must be positive")));
        }
        if deriv.len() > 2 {
            return Err(Error::InvalidParameter("kernels of type above 2 are not supported".into()));
        }
        if let Some(&i) = deriv.iter().find(|&&i| i >= d) {
            return Err(Error::InvalidParameter(format!("derivative index {i} out of range for d = {d}")));
        }
        Ok(KernelSpec { d, nu, deriv })
    }

    pub fn type_order(&self) -> usize {
        self.deriv.len()
    }
}

/// Standard deviation per coordinate of the kernel at time `t`.
pub fn kernel_std(nu: f64, t: f64) -> f64 {
    (2.0 * nu * t).sqrt()
}

/// `p(z, t)` with scale `nu`.
pub fn gaussian(d: usize, nu: f64, z: &[f64], t: f64) -> f64 {
    let s = nu * t;
    let r2: f64 = z.iter().map(|v| v * v).sum();
    (4.0 * PI * s).powf(-(d as f64) / 2.0) * (-r2 / (4.0 * s)).exp()
}

/// Ratio `(∂-kernel) / p` at `(z, t)`: the Hermite factor.
pub fn hermite_factor(spec: &KernelSpec, z: &[f64], t: f64) -> f64 {
    let s = spec.nu * t;
    match spec.deriv.as_slice() {
        [] => 1.0,
        [i] => -z[*i] / (2.0 * s),
        [i, j] => {
            let delta = if i == j { 1.0 } else { 0.0 };
            z[*i] * z[*j] / (4.0 * s * s) - delta / (2.0 * s)
        }
        _ => unreachable!("type order validated at construction"),
    }
}

/// The requested derivative of `p` at `(z, t)`.
pub fn kernel_eval(spec: &KernelSpec, z: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    Ok(hermite_factor(spec, z, t) * gaussian(spec.d, spec.nu, z, t))
}

/// One-dimensional factor of a separable kernel: `order`-th derivative of
/// the 1-D kernel at `x`.
fn factor_1d(order: usize, s: f64, x: f64) -> f64 {
    let g = (4.0 * PI * s).powf(-0.5) * (-x * x / (4.0 * s)).exp();
    match order {
        0 => g,
        1 => -x / (2.0 * s) * g,
        _ => (x * x / (4.0 * s * s) - 1.0 / (2.0 * s)) * g,
    }
}

/// Orders of differentiation per coordinate.
fn orders(spec: &KernelSpec) -> Vec<usize> {
    let mut o = vec![0usize; spec.d];
    for &i in &spec.deriv {
        o[i] += 1;
    }
    o
}

/// `‖∂-kernel(·, t)‖_{p}` for `p` in `[1, ∞]`, by separable 1-D quadrature on
/// `|x| <= 8 √(νt max(1, j))` per axis.
pub fn kernel_lp_norm(spec: &KernelSpec, p: Exponent, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    let s = spec.nu * t;
    let half = 8.0 * (s * (spec.type_order().max(1)) as f64).sqrt() * 2f64.sqrt();
    let rule = Rule::new(20);
    let mut total = 1.0;
    for order in orders(spec) {
        // zeros and extrema of the 1-D factor
        let root = (2.0 * s).sqrt();
        let marks = [0.0, root, -root, 6f64.sqrt() * root, -(6f64.sqrt()) * root, 3f64.sqrt() * root, -(3f64.sqrt()) * root];
        let b = refine(&breakpoints(-half, half, marks), 16);
        let v = match p {
            Exponent::Infinite => {
                let candidates = match order {
                    0 => vec![0.0],
                    1 => vec![root],
                    _ => vec![0.0, 3f64.sqrt() * root],
                };
                candidates.into_iter().map(|x| factor_1d(order, s, x).abs()).fold(0.0, f64::max)
            }
            Exponent::Finite(p) => rule.panels(&b, |x| factor_1d(order, s, x).abs().powf(p)).powf(1.0 / p),
        };
        total *= v;
    }
    Ok(total)
}

/// Result of fitting `‖kernel(·, s)‖_{r'} = C (sν)^{e}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrFit {
    pub expected_exponent: f64,
    pub fitted_exponent: f64,
    pub constant: f64,
    pub max_log_deviation: f64,
    pub norms: Vec<f64>,
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits the `L^{r'}` norm of the kernel, `r'` conjugate to `r`, against the
/// predicted power `-d/(2r) - k/2` of `sν`.
pub fn verify_lr_norm_bound(spec: &KernelSpec, r: Exponent, times: &[f64]) -> Result<LrFit> {
    if times.len() < 2 {
        return Err(Error::InsufficientData("need at least two times to fit an exponent".into()));
    }
    let rp = r.conjugate();
    let expected = -(spec.d as f64) * r.reciprocal() / 2.0 - spec.type_order() as f64 / 2.0;
    let norms = times.iter().map(|&s| kernel_lp_norm(spec, rp, s)).collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = times.iter().map(|s| (s * spec.nu).ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly);
    let offsets: Vec<f64> = lx.iter().zip(&ly).map(|(x, y)| y - expected * x).collect();
    let log_c = offsets.iter().sum::<f64>() / offsets.len() as f64;
    let max_dev = offsets.iter().map(|o| (o - log_c).abs()).fold(0.0, f64::max);
    Ok(LrFit { expected_exponent: expected, fitted_exponent: slope, constant: log_c.exp(), max_log_deviation: max_dev, norms })
}

/// Empirical type constant at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeBound {
    pub constant: f64,
    pub argmax: Vec<f64>,
}

/// `sup |h(z, s)| (νs)^{j/2} / p(z, 2s)` over sample points given in the
/// normalized coordinate `ζ = z / √(νs)`.
pub fn verify_type_bound(spec: &KernelSpec, normalized_points: &[f64], s: f64) -> Result<TypeBound> {
    if !(s > 0.0) {
        return Err(Error::NonpositiveTime(s));
    }
    let d = spec.d;
    if normalized_points.is_empty() || !normalized_points.len().is_multiple_of(d) {
        return Err(Error::InvalidParameter("sample points must be a nonempty flat list of d-vectors".into()));
    }
    let scale = (spec.nu * s).sqrt();
    let j = spec.type_order() as f64;
    let mut best = TypeBound { constant: 0.0, argmax: vec![0.0; d] };
    let mut z = vec![0.0; d];
    for zeta in normalized_points.chunks(d) {
        for (zi, v) in z.iter_mut().zip(zeta) {
            *zi = v * scale;
        }
        let ratio = kernel_eval(spec, &z, s)?.abs() * (spec.nu * s).powf(j / 2.0) / gaussian(d, spec.nu, &z, 2.0 * s);
        if ratio > best.constant {
            best = TypeBound { constant: ratio, argmax: zeta.to_vec() };
        }
    }
    Ok(best)
}

/// Regular grid of normalized sample points on `[-half, half]^d`.
pub fn normalized_grid(d: usize, half: f64, per_axis: usize) -> Vec<f64> {
    let n = per_axis.pow(d as u32);
    let mut out = Vec::with_capacity(n * d);
    for k in 0..n {
        let mut rem = k;
        for _ in 0..d {
            let i = rem % per_axis;
            rem /= per_axis;
            out.push(-half + 2.0 * half * i as f64 / (per_axis - 1) as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize, deriv: Vec<usize>) -> KernelSpec {
        KernelSpec::new(d, 0.7, deriv).unwrap()
    }

    #[test]
    fn origin_value_and_odd_symmetry() {
        let k = KernelSpec::new(1, 1.0, vec![]).unwrap();
        assert!((kernel_eval(&k, &[0.0], 1.0).unwrap() - 0.28209479177387814).abs() < 1e-15);
        for d in 1..4 {
            let k = spec(d, vec![d - 1]);
            assert_eq!(kernel_eval(&k, &vec![0.0; d], 0.3).unwrap(), 0.0);
        }
        assert!(matches!(kernel_eval(&k, &[0.0], 0.0), Err(Error::NonpositiveTime(_))));
        assert!(KernelSpec::new(2, 1.0, vec![0, 2]).is_err());
    }

    #[test]
    fn unit_mass_in_two_dimensions() {
        let k = spec(2, vec![]);
        let t = 0.4;
        let half = 8.0 * (k.nu * t).sqrt() * 2f64.sqrt();
        let rule = Rule::new(30);
        let b = refine(&[-half, half], 8);
        let mass = rule.panels(&b, |x| rule.panels(&b, |y| kernel_eval(&k, &[x, y], t).unwrap()));
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-4;
        let z = [0.3, -0.8];
        let t = 0.5;
        for i in 0..2 {
            let k1 = spec(2, vec![i]);
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let base = spec(2, vec![]);
            let fd = (kernel_eval(&base, &zp, t).unwrap() - kernel_eval(&base, &zm, t).unwrap()) / (2.0 * h);
            assert!((fd - kernel_eval(&k1, &z, t).unwrap()).abs() < 1e-7);
            for j in 0..2 {
                let k2 = spec(2, vec![i, j]);
                let mut zp = z;
                let mut zm = z;
                zp[j] += h;
                zm[j] -= h;
                let fd = (kernel_eval(&k1, &zp, t).unwrap() - kernel_eval(&k1, &zm, t).unwrap()) / (2.0 * h);
                assert!((fd - kernel_eval(&k2, &z, t).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scale_invariance() {
        for deriv in [vec![], vec![1], vec![0, 1], vec![0, 0]] {
            let k = spec(2, deriv.clone());
            let j = deriv.len() as i32;
            let z = [0.4, -1.1];
            for lam in [0.5, 2.0] {
                let lhs = kernel_eval(&k, &[lam * z[0], lam * z[1]], lam * lam * 0.9).unwrap();
                let rhs = f64::powi(lam, -2 - j) * kernel_eval(&k, &z, 0.9).unwrap();
                assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs().max(1e-300), "{deriv:?} {lhs} {rhs}");
            }
        }
    }

    #[test]
    fn semigroup_property() {
        let rule = Rule::new(30);
        for &(s, t, a) in &[(0.2, 0.5, 0.3), (1.0, 0.1, -1.2), (0.05, 0.05, 0.0)] {
            let k = spec(1, vec![]);
            let half = 10.0;
            let b = refine(&[-half, half], 40);
            let lhs = rule.panels(&b, |z| gaussian(1, k.nu, &[z], s) * gaussian(1, k.nu, &[a - z], t));
            assert!((lhs - gaussian(1, k.nu, &[a], s + t)).abs() < 1e-10);
            let lhs2 = rule.panels(&b, |z1| {
                rule.panels(&refine(&[-half, half], 10), |z2| gaussian(2, k.nu, &[z1, z2], s) * gaussian(2, k.nu, &[a - z1, 0.5 - z2], t))
            });
            assert!((lhs2 - gaussian(2, k.nu, &[a, 0.5], s + t)).abs() < 1e-8);
        }
    }

    #[test]
    fn lr_norms() {
        let times: Vec<f64> = (0..7).map(|i| 2f64.powi(i - 6)).collect();
        let fit = verify_lr_norm_bound(&spec(1, vec![]), Exponent::Infinite, &times).unwrap();
        assert!((fit.constant - 1.0).abs() < 1e-12);
        assert!(fit.fitted_exponent.abs() < 1e-10);
        let fit = verify_lr_norm_bound(&spec(1, vec![]), Exponent::Finite(2.0), &times).unwrap();
        assert!((fit.constant - (8.0 * PI).powf(-0.25)).abs() < 1e-10);
        assert!((fit.fitted_exponent + 0.25).abs() < 1e-10);
        let fit = verify_lr_norm_bound(&spec(1, vec![0]), Exponent::Infinite, &times).unwrap();
        assert!((fit.fitted_exponent + 0.5).abs() < 1e-10);
        // sup norm of p_z is attained at z = √(2s)
        let s = 0.7;
        let sup = kernel_lp_norm(&spec(1, vec![0]), Exponent::Infinite, 1.0).unwrap();
        let scan = (0..200001).map(|i| factor_1d(1, s, -5.0 + i as f64 * 5e-5).abs()).fold(0.0, f64::max);
        assert!((sup - scan).abs() < 1e-9);
    }

    #[test]
    fn type_constants_are_scale_free() {
        let k = spec(1, vec![]);
        let c = verify_type_bound(&k, &[0.0], 1.3).unwrap();
        assert!((c.constant - 2f64.sqrt()).abs() < 1e-14);
        let pts = normalized_grid(1, 12.0, 4801);
        let k1 = spec(1, vec![0]);
        let vals: Vec<f64> = [0.1, 1.0, 10.0].iter().map(|&s| verify_type_bound(&k1, &pts, s).unwrap().constant).collect();
        assert!(vals.iter().all(|v| v.is_finite() && (v - vals[0]).abs() < 1e-6 * vals[0]));
        let pts2 = normalized_grid(2, 10.0, 201);
        let k2 = spec(2, vec![0, 1]);
        let vals: Vec<f64> = [0.1, 1.0, 10.0].iter().map(|&s| verify_type_bound(&k2, &pts2, s).unwrap().constant).collect();
        assert!(vals.iter().all(|v| v.is_finite() && (v - vals[0]).abs() < 1e-6 * vals[0]));
    }
}
