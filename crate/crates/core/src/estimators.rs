//! Monte Carlo estimators of flow regularity with batch-means errors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{euclid, min_spacing, norm2};
use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::flow::{BrownianLattice, FlowEnsemble};
use crate::heat_kernel::linear_fit;
use crate::linalg::entry_sum_norm;
use crate::stats::{batch_means, mean_se, wilson_interval, MIN_BATCHES};

/// One estimate with its batch-means standard error and context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Set when the estimate could not be represented.
    #[serde(default)]
    pub diverged: bool,
}

impl EstimateReport {
    /// Report from per-sample values with `>= 30` batches.
    pub fn from_samples(estimand: impl Into<String>, values: &[f64]) -> Result<Self> {
        let m = batch_means(values, MIN_BATCHES)?;
        Ok(EstimateReport {
            estimand: estimand.into(),
            estimate: m.mean,
            std_error: m.se,
            n_samples: values.len(),
            params: BTreeMap::new(),
            delta1: None,
            drift_norm: None,
            seed: None,
            diverged: false,
        })
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_regime(mut self, delta1: Option<f64>, drift_norm: Option<f64>) -> Self {
        self.delta1 = delta1;
        self.drift_norm = drift_norm;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// `estimate ± 3 SE`.
    pub fn interval(&self) -> (f64, f64) {
        (self.estimate - 3.0 * self.std_error, self.estimate + 3.0 * self.std_error)
    }

    pub const CSV_HEADER: &'static str = "estimand,params,estimate,std_error,n,seed";

    pub fn csv_row(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{}", self.estimand, params.join(";"), self.estimate, self.std_error, self.n_samples, seed)
    }
}

/// Per-point moment reports and the lattice maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub per_point: Vec<EstimateReport>,
    /// Index of the point with the largest estimate.
    pub argmax: usize,
    pub sup: EstimateReport,
}

/// `E[|D_aX|^p + |(D_aX)^{-1}|^p]` with the entrywise-sum norm, per initial
/// point, and its maximum over the lattice.
pub fn moment_estimate(ens: &FlowEnsemble, p: f64, t: f64) -> Result<MomentReport> {
    if !(p >= 0.0) {
        return Err(Error::InvalidParameter(format!("moment order {p} must be nonnegative")));
    }
    let ti = ens.time_index(t)?;
    let per_point = (0..ens.n_points())
        .map(|a| {
            let values = (0..ens.n_paths())
                .map(|path| {
                    let j = entry_sum_norm(ens.jacobian(path, ti, a)?);
                    let k = entry_sum_norm(ens.inverse_jacobian(path, ti, a)?);
                    Ok(j.powf(p) + k.powf(p))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(EstimateReport::from_samples("jacobian_moment", &values)?
                .with_param("p", p)
                .with_param("t", t)
                .with_param("point", a as f64)
                .with_seed(ens.meta.seed))
        })
        .collect::<Result<Vec<_>>>()?;
    let argmax = per_point.iter().enumerate().max_by(|a, b| a.1.estimate.total_cmp(&b.1.estimate)).map(|(i, _)| i).unwrap_or(0);
    let sup = EstimateReport { estimand: "jacobian_moment_sup".into(), ..per_point[argmax].clone() };
    Ok(MomentReport { per_point, argmax, sup })
}

/// Empirical survival curve of `|D_aX(a, t)|` pooled over paths and points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub lambdas: Vec<f64>,
    pub survival: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Levels with no exceedance.
    pub censored: Vec<bool>,
    pub n: usize,
    pub fit: Option<TailFit>,
}

/// Regression of `log(-log P)` on `log log λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
    /// `1 / (1 - δ₁)` when the regime is known.
    pub reference: Option<f64>,
}

pub fn tail_probability(ens: &FlowEnsemble, lambdas: &[f64], t: f64, delta1: Option<f64>) -> Result<TailCurve> {
    let ti = ens.time_index(t)?;
    let mut norms = Vec::with_capacity(ens.n_paths() * ens.n_points());
    for path in 0..ens.n_paths() {
        for a in 0..ens.n_points() {
            norms.push(entry_sum_norm(ens.jacobian(path, ti, a)?));
        }
    }
    if norms.is_empty() {
        return Err(Error::InsufficientData("ensemble has no retained paths".into()));
    }
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    let z = 1.959_963_984_540_054;
    let mut curve = TailCurve {
        lambdas: lambdas.to_vec(),
        survival: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        censored: Vec::new(),
        n,
        fit: None,
    };
    for &l in lambdas {
        let below = norms.partition_point(|&v| v < l);
        let k = n - below;
        let (lo, hi) = wilson_interval(k, n, z);
        curve.survival.push(k as f64 / n as f64);
        curve.lower.push(lo);
        curve.upper.push(hi);
        curve.censored.push(k == 0);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = lambdas
        .iter()
        .zip(&curve.survival)
        .filter(|(l, p)| **l > std::f64::consts::E && **p > 0.0 && **p < 1.0)
        .map(|(l, p)| (l.ln().ln(), (-p.ln()).ln()))
        .unzip();
    if xs.len() >= 3 {
        let (slope, intercept) = linear_fit(&xs, &ys);
        curve.fit = Some(TailFit { slope, intercept, points: xs.len(), reference: delta1.map(|d| 1.0 / (1.0 - d)) });
    }
    Ok(curve)
}

/// Pairs `(i, j)`, `i < j`, of points within distance `delta` inside the
/// ball of radius `ell`.
fn close_pairs(points: &[f64], d: usize, delta: f64, ell: f64) -> Result<Vec<(usize, usize)>> {
    let inside: Vec<usize> = (0..points.len() / d).filter(|&i| norm2(&points[i * d..(i + 1) * d]).sqrt() <= ell).collect();
    if inside.len() < 2 {
        return Err(Error::InsufficientData(format!("fewer than two lattice points inside |a| <= {ell}")));
    }
    let sub: Vec<f64> = inside.iter().flat_map(|&i| points[i * d..(i + 1) * d].iter().copied()).collect();
    let spacing = min_spacing(&sub, d);
    if spacing > delta / 4.0 * (1.0 + 1e-12) {
        return Err(Error::LatticeTooCoarse { spacing, delta });
    }
    let mut pairs = Vec::new();
    for (x, &i) in inside.iter().enumerate() {
        for &j in &inside[x + 1..] {
            if euclid(&points[i * d..(i + 1) * d], &points[j * d..(j + 1) * d]) <= delta * (1.0 + 1e-12) {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}

/// `E sup_{|a-b| <= δ, |a|, |b| <= ℓ} |X(a,t) - X(b,t)|` over lattice pairs.
pub fn modulus_of_continuity(ens: &FlowEnsemble, delta: f64, ell: f64, t: f64) -> Result<EstimateReport> {
    let ti = ens.time_index(t)?;
    let pairs = close_pairs(&ens.initial_points, ens.d, delta, ell)?;
    let values: Vec<f64> = (0..ens.n_paths())
        .map(|path| pairs.iter().map(|&(i, j)| euclid(ens.position(path, ti, i), ens.position(path, ti, j))).fold(0.0, f64::max))
        .collect();
    Ok(EstimateReport::from_samples("modulus_of_continuity", &values)?
        .with_param("delta", delta)
        .with_param("ell", ell)
        .with_param("t", t)
        .with_seed(ens.meta.seed))
}

/// Modulus estimates over a δ grid with the fitted log-log slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusScaling {
    pub reports: Vec<EstimateReport>,
    pub slope: f64,
}

pub fn modulus_scaling(ens: &FlowEnsemble, deltas: &[f64], ell: f64, t: f64) -> Result<ModulusScaling> {
    let reports = deltas.iter().map(|&dl| modulus_of_continuity(ens, dl, ell, t)).collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = reports.iter().map(|r| r.estimate.ln()).collect();
    let slope = if deltas.len() >= 2 { linear_fit(&lx, &ly).0 } else { f64::NAN };
    Ok(ModulusScaling { reports, slope })
}

/// Parameters of the Garsia-Rodemich-Rumsey comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrrParams {
    pub beta: f64,
    pub p: f64,
    pub ell: f64,
    pub horizon: f64,
    pub delta: f64,
}

/// Per-path sides of the inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrrReport {
    pub params: GrrParams,
    /// Joint space-time modulus on the grid.
    pub lhs: Vec<f64>,
    /// `δ^{β - (d+1)/p}` times the discrete double integral to the power `1/p`.
    pub rhs: Vec<f64>,
    pub ratio: Vec<f64>,
    pub max_ratio: f64,
}

impl GrrReport {
    /// True when `lhs <= c · rhs` on every path.
    pub fn holds_with(&self, c: f64) -> bool {
        self.lhs.iter().zip(&self.rhs).all(|(l, r)| *l <= c * r)
    }
}

/// Trapezoid weights of a possibly nonuniform grid.
fn trapezoid(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { times[i] - times[i - 1] } else { 0.0 };
            let right = if i + 1 < n { times[i + 1] - times[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Both sides of the GRR inequality on the stored `(a, t)` grid, using the
/// joint increment `|X(a,t) - X(b,s)|` and spatial weights `weights` (one
/// per initial point, e.g. lattice trapezoid weights).
pub fn grr_check(ens: &FlowEnsemble, weights: &[f64], params: GrrParams) -> Result<GrrReport> {
    let d = ens.d;
    let GrrParams { beta, p, ell, horizon, delta } = params;
    if !(beta > 0.0 && beta < 1.0) || !(p > (d as f64 + 1.0) / beta) {
        return Err(Error::Precondition(format!("GRR needs 0 < beta < 1 and p > (d+1)/beta, got beta = {beta}, p = {p}")));
    }
    if weights.len() != ens.n_points() {
        return Err(Error::InvalidParameter("one spatial weight per initial point is required".into()));
    }
    let space: Vec<usize> = (0..ens.n_points()).filter(|&i| norm2(ens.initial_point(i)).sqrt() <= ell + 1e-12).collect();
    let times: Vec<usize> = (0..ens.n_times()).filter(|&k| ens.times[k] <= horizon + 1e-12).collect();
    if space.len() < 2 || times.len() < 2 {
        return Err(Error::InsufficientData("GRR needs at least two points and two times".into()));
    }
    let tw = trapezoid(&times.iter().map(|&k| ens.times[k]).collect::<Vec<_>>());
    // flattened space-time nodes: (point, time index, coordinates, weight)
    let nodes: Vec<(usize, usize, Vec<f64>, f64)> = space
        .iter()
        .flat_map(|&i| {
            times.iter().zip(&tw).map(move |(&k, &w)| {
                let mut z = ens.initial_point(i).to_vec();
                z.push(ens.times[k]);
                (i, k, z, weights[i] * w)
            })
        })
        .collect();
    let expo = beta * p + d as f64 + 1.0;
    let prefactor = delta.powf(beta - (d as f64 + 1.0) / p);
    let kernel: Vec<(usize, usize, f64)> = (0..nodes.len())
        .flat_map(|x| (x + 1..nodes.len()).map(move |y| (x, y)))
        .map(|(x, y)| (x, y, 2.0 * nodes[x].3 * nodes[y].3 / euclid(&nodes[x].2, &nodes[y].2).powf(expo)))
        .collect();
    let near: Vec<(usize, usize)> = kernel
        .iter()
        .filter(|&&(x, y, _)| {
            let (a, b) = (&nodes[x], &nodes[y]);
            euclid(&a.2[..d], &b.2[..d]) <= delta * (1.0 + 1e-12) && (a.2[d] - b.2[d]).abs() <= delta * (1.0 + 1e-12)
        })
        .map(|&(x, y, _)| (x, y))
        .collect();
    let per_path: Vec<(f64, f64)> = (0..ens.n_paths())
        .into_par_iter()
        .map(|path| {
            let pos = |x: usize| ens.position(path, nodes[x].1, nodes[x].0);
            let lhs = near.iter().map(|&(x, y)| euclid(pos(x), pos(y))).fold(0.0, f64::max);
            let integral: f64 = kernel.iter().map(|&(x, y, k)| k * euclid(pos(x), pos(y)).powf(p)).sum();
            (lhs, prefactor * integral.powf(1.0 / p))
        })
        .collect();
    let (lhs, rhs): (Vec<f64>, Vec<f64>) = per_path.into_iter().unzip();
    let ratio: Vec<f64> = lhs.iter().zip(&rhs).map(|(l, r)| l / r).collect();
    let max_ratio = ratio.iter().copied().fold(0.0, f64::max);
    Ok(GrrReport { params, lhs, rhs, ratio, max_ratio })
}

/// Exponential and first-moment functionals of `∫|u|^2` along `a + σB`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KhasminskiiReport {
    pub exponential: EstimateReport,
    pub first_moment: EstimateReport,
    /// Sample-wise values of `∫_0^t |u|^2 ds`.
    #[serde(skip)]
    pub integrals: Vec<f64>,
}

const EXP_LIMIT: f64 = 1e300;

/// Left-point Riemann sums of `|u|^2(a + σB(s), s)` over `[0, t]`.
pub fn path_energy(drift: &dyn DriftField, lattice: &BrownianLattice, a: &[f64], sigma: f64, t: f64) -> Result<Vec<f64>> {
    let d = lattice.dim();
    if a.len() != d || drift.dim() != d {
        return Err(Error::InvalidParameter("dimension mismatch between drift, lattice and point".into()));
    }
    let n = lattice.steps_to(t)?;
    let dt = lattice.dt();
    Ok((0..lattice.n_paths())
        .into_par_iter()
        .map(|path| {
            let mut noise = lattice.noise(path);
            let mut x = a.to_vec();
            let mut u = vec![0.0; d];
            let mut db = vec![0.0; d];
            let mut acc = 0.0;
            for k in 0..n {
                drift.eval(&x, k as f64 * dt, &mut u);
                acc += norm2(&u) * dt;
                noise.next_into(&mut db);
                x.iter_mut().zip(&db).for_each(|(xi, b)| *xi += sigma * b);
            }
            acc
        })
        .collect())
}

pub fn khasminskii_functional(
    drift: &dyn DriftField,
    lattice: &BrownianLattice,
    a: &[f64],
    lambda: f64,
    sigma: f64,
    t: f64,
) -> Result<KhasminskiiReport> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be nonnegative")));
    }
    let integrals = path_energy(drift, lattice, a, sigma, t)?;
    let expo: Vec<f64> = integrals.iter().map(|v| (lambda * v).exp()).collect();
    let diverged = expo.iter().any(|v| !(v.is_finite() && *v <= EXP_LIMIT));
    let mut exponential = if diverged {
        EstimateReport { diverged: true, ..EstimateReport::from_samples("khasminskii_exponential", &vec![0.0; integrals.len()])? }
    } else {
        EstimateReport::from_samples("khasminskii_exponential", &expo)?
    };
    if diverged {
        exponential.estimate = f64::INFINITY;
        exponential.std_error = f64::NAN;
    }
    let exponential = exponential.with_param("lambda", lambda).with_param("t", t).with_seed(lattice.seed());
    let first_moment = EstimateReport::from_samples("khasminskii_first_moment", &integrals)?.with_param("t", t).with_seed(lattice.seed());
    Ok(KhasminskiiReport { exponential, first_moment, integrals })
}

/// Maximum over initial points of the first moment at each time, and the
/// fitted log-log slope in `t`.
pub fn khasminskii_scaling(
    drift: &dyn DriftField,
    lattice: &BrownianLattice,
    points: &[f64],
    sigma: f64,
    times: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let d = lattice.dim();
    let sups = times
        .iter()
        .map(|&t| {
            points
                .chunks(d)
                .map(|a| path_energy(drift, lattice, a, sigma, t).map(|v| mean_se(&v).mean))
                .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let lx: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
    Ok((sups.clone(), linear_fit(&lx, &ly).0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoxDomain, Lattice};
    use crate::drift::DriftSpec;
    use crate::flow::{simulate_ensemble, simulate_flow, FlowOptions, JacobianScheme};

    fn jac_ensemble(spec: DriftSpec, sigma: f64, paths: usize, points: &[f64]) -> FlowEnsemble {
        let lat = BrownianLattice::new(1e-2, 100, 2, 3, paths).unwrap();
        let f = spec.build(2).unwrap();
        let opts = FlowOptions::positions(sigma, 1.0).with_stride(50).with_jacobians(JacobianScheme::EulerTangent);
        simulate_ensemble(&f, &lat, points, &opts).unwrap()
    }

    #[test]
    fn zero_drift_moments_and_tail() {
        let ens = jac_ensemble(DriftSpec::Zero, 0.5, 40, &[0.0, 0.0]);
        let m = moment_estimate(&ens, 3.0, 1.0).unwrap();
        assert!((m.sup.estimate - 2.0 * 8.0).abs() < 1e-12 && m.sup.std_error == 0.0);
        assert_eq!(moment_estimate(&ens, 0.0, 1.0).unwrap().sup.estimate, 2.0);
        let tail = tail_probability(&ens, &[1.0, 2.0, 2.0 + 1e-9, 3.0], 1.0, None).unwrap();
        assert_eq!(tail.survival, vec![1.0, 1.0, 0.0, 0.0]);
        assert!(tail.censored[3]);
    }

    #[test]
    fn rotation_moment_matches_exponential() {
        let n = 1000;
        let t = std::f64::consts::FRAC_PI_2;
        let lat = BrownianLattice::new(t / n as f64, n, 2, 0, 30).unwrap();
        let f = DriftSpec::Linear { matrix: vec![0.0, 1.0, -1.0, 0.0] }.build(2).unwrap();
        let opts = FlowOptions::positions(0.0, lat.horizon()).with_stride(n).with_jacobians(JacobianScheme::Heun);
        let ens = simulate_ensemble(&f, &lat, &[0.0, 0.0], &opts).unwrap();
        let m = moment_estimate(&ens, 2.0, lat.horizon()).unwrap();
        assert!((m.sup.estimate - 8.0).abs() < 1e-4, "{:?}", m.sup);
    }

    #[test]
    fn bump_moments_are_log_convex() {
        let ens = jac_ensemble(DriftSpec::SmoothBump { amplitude: 2.0, width: 0.7, center: None, direction: None }, 0.6, 300, &[0.1, 0.0]);
        let e: Vec<f64> = [2.0, 4.0, 8.0].iter().map(|&p| moment_estimate(&ens, p, 1.0).unwrap().sup.estimate).collect();
        assert!(e[0] < e[1] && e[1] < e[2]);
        // Lyapunov: log E|X|^p is convex in p
        assert!(e[1].ln() <= 0.5 * (e[0].ln() + e[2].ln()) + 1e-12);
        let lambdas: Vec<f64> = (0..400).map(|i| i as f64 * 0.02).collect();
        let tail = tail_probability(&ens, &lambdas, 1.0, Some(0.5)).unwrap();
        assert!(tail.survival.windows(2).all(|w| w[1] <= w[0]));
        assert!(tail.lower.iter().zip(&tail.upper).all(|(l, u)| *l >= 0.0 && *u <= 1.0 && l <= u));
        // layer cake: E|J| = ∫ P(|J| >= λ) dλ
        let layer: f64 = tail.survival.iter().map(|s| s * 0.02).sum();
        let direct = (0..ens.n_paths()).map(|p| entry_sum_norm(ens.jacobian(p, 2, 0).unwrap())).sum::<f64>() / ens.n_paths() as f64;
        assert!((layer - direct).abs() < 0.05 * direct);
    }

    #[test]
    fn modulus_of_translation_flow() {
        let lat = Lattice::regular(BoxDomain::centered_cube(2, 1.0), 9).unwrap();
        let lb = BrownianLattice::new(1e-2, 100, 2, 1, 30).unwrap();
        let zero = DriftSpec::Zero.build(2).unwrap();
        let ens = simulate_flow(&zero, &lb, &lat.points, 0.4, 1.0, 50).unwrap();
        let r = modulus_of_continuity(&ens, 1.0, 1.0, 1.0).unwrap();
        assert!((r.estimate - 1.0).abs() < 1e-12);
        assert!(matches!(modulus_of_continuity(&ens, 0.5, 1.0, 1.0), Err(Error::LatticeTooCoarse { .. })));
        let s = modulus_scaling(&ens, &[1.0, 2.0], 1.5, 1.0).unwrap();
        assert!(s.reports[1].estimate >= s.reports[0].estimate);
    }

    #[test]
    fn grr_on_identity_and_brownian_flows() {
        let lat = Lattice::regular(BoxDomain::centered_cube(1, 1.0), 9).unwrap();
        let zero = DriftSpec::Zero.build(1).unwrap();
        let params = GrrParams { beta: 0.4, p: 8.0, ell: 1.0, horizon: 1.0, delta: 0.25 };
        let lb = BrownianLattice::new(1.0 / 16.0, 16, 1, 2, 30).unwrap();
        let still = simulate_flow(&zero, &lb, &lat.points, 0.0, 1.0, 2).unwrap();
        let r = grr_check(&still, &lat.weights, params).unwrap();
        assert!(r.lhs.iter().all(|&l| (l - 0.25).abs() < 1e-12));
        assert!(r.max_ratio.is_finite() && r.rhs.iter().all(|&v| v > 0.0));
        let moving = simulate_flow(&zero, &lb, &lat.points, 0.5, 1.0, 2).unwrap();
        let m = grr_check(&moving, &lat.weights, params).unwrap();
        assert!(m.lhs.iter().all(|&l| l >= 0.25 - 1e-12));
        assert!(m.holds_with(m.max_ratio));
        let bad = GrrParams { p: 2.0, ..params };
        assert!(matches!(grr_check(&moving, &lat.weights, bad), Err(Error::Precondition(_))));
    }

    #[test]
    fn khasminskii_constant_and_zero_fields() {
        let lat = BrownianLattice::new(1e-2, 100, 2, 4, 64).unwrap();
        let zero = DriftSpec::Zero.build(2).unwrap();
        let r = khasminskii_functional(&zero, &lat, &[0.0, 0.0], 1.0, 0.5, 1.0).unwrap();
        assert_eq!(r.exponential.estimate, 1.0);
        assert_eq!(r.first_moment.estimate, 0.0);
        let c = DriftSpec::Constant { value: vec![0.6, 0.8] }.build(2).unwrap();
        let r = khasminskii_functional(&c, &lat, &[0.0, 0.0], 0.5, 0.5, 1.0).unwrap();
        assert!((r.first_moment.estimate - 1.0).abs() < 1e-12);
        assert!((r.exponential.estimate - 0.5f64.exp()).abs() < 1e-12);
        let huge = khasminskii_functional(&c, &lat, &[0.0, 0.0], 1e4, 0.5, 1.0).unwrap();
        assert!(huge.exponential.diverged);
    }

    #[test]
    fn khasminskii_is_monotone_pathwise() {
        let lat = BrownianLattice::new(1e-2, 100, 1, 4, 64).unwrap();
        let f = DriftSpec::SmoothBump { amplitude: 1.0, width: 1.0, center: None, direction: None }.build(1).unwrap();
        let a = path_energy(&f, &lat, &[0.2], 0.5, 0.5).unwrap();
        let b = path_energy(&f, &lat, &[0.2], 0.5, 1.0).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
        let lo = khasminskii_functional(&f, &lat, &[0.2], 0.5, 0.5, 1.0).unwrap();
        let hi = khasminskii_functional(&f, &lat, &[0.2], 1.0, 0.5, 1.0).unwrap();
        assert!(lo.exponential.estimate <= hi.exponential.estimate);
        assert!((0.5 * lo.first_moment.estimate).exp() <= lo.exponential.estimate);
    }
}
