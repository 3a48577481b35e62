//! Truncated iterated-integral expansion of the tangent flow.

use serde::{Deserialize, Serialize};

use super::{BrownianLattice, FlowOptions, PathObserver, PathView};
use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::linalg::{frobenius, identity, mat_mul};

/// Partial sums of the forward and inverse series at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DysonResult {
    pub t: f64,
    /// `I + Σ_{n ≤ N} S_n(t)`.
    pub partial_sum: Vec<f64>,
    /// `I + Σ_{n ≤ N} T_n(t)` with alternating, reversed products.
    pub inverse_partial_sum: Vec<f64>,
    /// `‖S_n(t)‖_F` for `n = 1..=N`.
    pub term_norms: Vec<f64>,
    pub inverse_term_norms: Vec<f64>,
    /// Euler tangent `∏ (I + dt Du)` on the same path.
    pub jacobian: Vec<f64>,
    pub warnings: Vec<String>,
}

struct Collect(Vec<f64>);

impl PathObserver for Collect {
    type Output = Vec<f64>;
    fn observe(&mut self, v: &PathView<'_>) {
        self.0.extend_from_slice(v.positions);
    }
    fn finish(self) -> Vec<f64> {
        self.0
    }
}

/// Evaluates the series with left-point sums on the fine grid:
/// `S_{m+1}(t_{k+1}) = S_{m+1}(t_k) + dt Du(X_k) S_m(t_k)`, and for the
/// inverse `T_{m+1}(t_{k+1}) = T_{m+1}(t_k) - dt T_m(t_k) Du(X_k)`.
/// Summing all orders reproduces the Euler tangent exactly.
pub fn dyson_series(
    drift: &dyn DriftField,
    lattice: &BrownianLattice,
    a: &[f64],
    sigma: f64,
    t: f64,
    n_terms: usize,
    path: usize,
) -> Result<DysonResult> {
    if !drift.has_grad() {
        return Err(Error::MissingGradient(drift.name()));
    }
    let d = a.len();
    let dd = d * d;
    let opts = FlowOptions::positions(sigma, t);
    let xs = super::simulate_path(drift, lattice, a, &opts, path, Collect(Vec::new()))?
        .ok_or_else(|| Error::Precondition("trajectory left the finite range".into()))?;
    let n = xs.len() / d - 1;
    let dt = lattice.dt();
    let mut warnings = Vec::new();
    if n_terms > n {
        warnings.push(format!("{n_terms} terms exceed the {n} stored steps; orders above {n} vanish on this grid"));
    }
    let mut s: Vec<Vec<f64>> = (0..=n_terms).map(|m| if m == 0 { identity(d) } else { vec![0.0; dd] }).collect();
    let mut inv = s.clone();
    let mut jac = identity(d);
    let mut du = vec![0.0; dd];
    let mut tmp = vec![0.0; dd];
    for k in 0..n {
        drift.grad(&xs[k * d..(k + 1) * d], k as f64 * dt, &mut du);
        // highest order first so every update reads S_m(t_k)
        for m in (1..=n_terms).rev() {
            mat_mul(&du, &s[m - 1], d, &mut tmp);
            s[m].iter_mut().zip(&tmp).for_each(|(a, b)| *a += dt * b);
            mat_mul(&inv[m - 1], &du, d, &mut tmp);
            inv[m].iter_mut().zip(&tmp).for_each(|(a, b)| *a -= dt * b);
        }
        mat_mul(&du, &jac, d, &mut tmp);
        jac.iter_mut().zip(&tmp).for_each(|(a, b)| *a += dt * b);
    }
    let sum = |terms: &[Vec<f64>]| {
        let mut out = vec![0.0; dd];
        for term in terms {
            out.iter_mut().zip(term).for_each(|(a, b)| *a += b);
        }
        out
    };
    Ok(DysonResult {
        t: n as f64 * dt,
        partial_sum: sum(&s),
        inverse_partial_sum: sum(&inv),
        term_norms: s[1..].iter().map(|m| frobenius(m)).collect(),
        inverse_term_norms: inv[1..].iter().map(|m| frobenius(m)).collect(),
        jacobian: jac,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::DriftSpec;
    use crate::linalg::{expm, frobenius_diff};

    #[test]
    fn zero_drift_gives_identity() {
        let lat = BrownianLattice::new(0.01, 50, 2, 1, 1).unwrap();
        let f = DriftSpec::Zero.build(2).unwrap();
        let r = dyson_series(&f, &lat, &[0.0, 0.0], 0.5, 0.5, 6, 0).unwrap();
        assert_eq!(r.partial_sum, identity(2));
        assert_eq!(r.inverse_partial_sum, identity(2));
        assert!(r.term_norms.iter().all(|&n| n == 0.0));
    }

    #[test]
    fn constant_gradient_gives_exponential_series() {
        let a = [0.0, 1.0, -2.0, 0.3];
        let f = DriftSpec::Linear { matrix: a.to_vec() }.build(2).unwrap();
        let lat = BrownianLattice::new(1e-5, 50_000, 2, 1, 1).unwrap();
        let r = dyson_series(&f, &lat, &[1.0, 1.0], 0.4, 0.5, 12, 0).unwrap();
        assert!(frobenius_diff(&r.partial_sum, &expm(&a, 2, 0.5)) < 1e-4);
        assert!(frobenius_diff(&r.inverse_partial_sum, &expm(&a, 2, -0.5)) < 1e-4);
        assert!(frobenius_diff(&r.partial_sum, &r.jacobian) < 1e-8);
    }

    #[test]
    fn too_many_terms_warn() {
        let lat = BrownianLattice::new(0.1, 3, 1, 0, 1).unwrap();
        let f = DriftSpec::Linear { matrix: vec![1.0] }.build(1).unwrap();
        let r = dyson_series(&f, &lat, &[0.0], 0.1, 0.3, 5, 0).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.term_norms[3], 0.0);
        assert!((r.partial_sum[0] - 1.1f64.powi(3)).abs() < 1e-14);
    }
}
