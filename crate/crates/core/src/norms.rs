//! Mixed `L^{r,q}` norms by nested composite Simpson quadrature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{norm2, BoxDomain};
use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::exponents::Exponent;

/// Number of Simpson intervals per spatial axis and in time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormGrid {
    pub space: usize,
    pub time: usize,
}

impl Default for NormGrid {
    fn default() -> Self {
        NormGrid { space: 64, time: 16 }
    }
}

/// Value at the requested grid and `|fine - coarse|` against the grid with
/// half as many intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub error: f64,
}

/// Composite Simpson nodes and weights on `[a, b]` with `n` intervals
/// (rounded up to even).
pub fn simpson_rule(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n.max(2).div_ceil(2) * 2;
    let h = (b - a) / n as f64;
    let nodes = (0..=n).map(|i| a + i as f64 * h).collect();
    let weights = (0..=n)
        .map(|i| {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

fn spatial_norm(field: &dyn DriftField, bx: &BoxDomain, n: usize, r: Exponent, t: f64) -> f64 {
    let d = bx.dim();
    let rules: Vec<_> = (0..d).map(|i| simpson_rule(bx.lower[i], bx.upper[i], n)).collect();
    let per = rules[0].0.len();
    let total = per.pow(d as u32);
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut u = vec![0.0; field.dim()];
    let mut acc = 0.0;
    for _ in 0..total {
        let mut w = 1.0;
        for axis in 0..d {
            x[axis] = rules[axis].0[idx[axis]];
            w *= rules[axis].1[idx[axis]];
        }
        field.eval(&x, t, &mut u);
        let m = norm2(&u);
        match r {
            Exponent::Infinite => acc = f64::max(acc, m),
            Exponent::Finite(r) => acc += w * m.powf(r),
        }
        for axis in (0..d).rev() {
            idx[axis] += 1;
            if idx[axis] < per {
                break;
            }
            idx[axis] = 0;
        }
    }
    match r {
        Exponent::Infinite => acc,
        Exponent::Finite(r) => acc.max(0.0).powf(1.0 / r),
    }
}

fn nested(field: &dyn DriftField, bx: &BoxDomain, r: Exponent, q: Exponent, horizon: f64, grid: NormGrid) -> f64 {
    let (times, tw) = simpson_rule(0.0, horizon, grid.time);
    let inner: Vec<f64> = times.par_iter().map(|&t| spatial_norm(field, bx, grid.space, r, t)).collect();
    match q {
        Exponent::Infinite => inner.iter().copied().fold(0.0, f64::max),
        Exponent::Finite(q) => inner.iter().zip(&tw).map(|(v, w)| w * v.powf(q)).sum::<f64>().max(0.0).powf(1.0 / q),
    }
}

/// `(∫_0^T ‖u(·, t)‖_r^q dt)^{1/q}` over the support box of the field, or
/// over `truncation` when given.
pub fn mixed_norm(
    field: &dyn DriftField,
    r: Exponent,
    q: Exponent,
    horizon: f64,
    grid: NormGrid,
    truncation: Option<&BoxDomain>,
) -> Result<NormEstimate> {
    if grid.space < 2 || grid.time < 2 {
        return Err(Error::InvalidParameter("norm grid needs at least 2 intervals per axis".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::NonpositiveTime(horizon));
    }
    let support = field.support();
    let bx = match (truncation, support.bounding_box()) {
        (Some(b), _) | (None, Some(b)) => b.clone(),
        (None, None) => return Err(Error::UnboundedSupport(field.name())),
    };
    if bx.dim() != field.dim() {
        return Err(Error::InvalidParameter("truncation box dimension differs from the field".into()));
    }
    let fine = nested(field, &bx, r, q, horizon, grid);
    let coarse = nested(field, &bx, r, q, horizon, NormGrid { space: grid.space / 2, time: grid.time / 2 });
    Ok(NormEstimate { value: fine, error: (fine - coarse).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DriftSpec, FnField, Scaled};
    use proptest::prelude::*;

    fn bump_1d() -> impl DriftField {
        FnField::new(1, "gauss", |x: &[f64], _t: f64, out: &mut [f64]| out[0] = (-x[0] * x[0]).exp())
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let f = DriftSpec::Zero.build(2).unwrap();
        for (r, q) in [(Exponent::Finite(3.0), Exponent::Finite(4.0)), (Exponent::Infinite, Exponent::Infinite)] {
            let n = mixed_norm(&f, r, q, 1.0, NormGrid { space: 8, time: 4 }, None).unwrap();
            assert_eq!(n.value, 0.0);
        }
    }

    #[test]
    fn constant_on_unit_box() {
        let c = 1.7;
        let f = FnField::new(2, "c", move |_: &[f64], _t: f64, out: &mut [f64]| {
            out[0] = c * 0.6;
            out[1] = c * 0.8;
        })
        .with_support(BoxDomain::cube(2, 0.0, 1.0));
        let t: f64 = 2.0;
        let n = mixed_norm(&f, Exponent::Finite(3.0), Exponent::Finite(4.0), t, NormGrid { space: 8, time: 8 }, None).unwrap();
        assert!((n.value - c * t.powf(0.25)).abs() < 1e-12);
        let n = mixed_norm(&f, Exponent::Infinite, Exponent::Infinite, t, NormGrid { space: 8, time: 8 }, None).unwrap();
        assert!((n.value - c).abs() < 1e-12);
    }

    #[test]
    fn unbounded_field_needs_truncation() {
        let f = bump_1d();
        let err = mixed_norm(&f, Exponent::Finite(2.0), Exponent::Finite(4.0), 1.0, NormGrid::default(), None);
        assert!(matches!(err, Err(Error::UnboundedSupport(_))));
    }

    #[test]
    fn gaussian_bump_against_refined_reference() {
        let f = bump_1d();
        let bx = BoxDomain::centered_cube(1, 6.0);
        let (r, q) = (Exponent::Finite(2.0), Exponent::Finite(4.0));
        let base = mixed_norm(&f, r, q, 1.0, NormGrid { space: 64, time: 8 }, Some(&bx)).unwrap();
        let reference = mixed_norm(&f, r, q, 1.0, NormGrid { space: 640, time: 80 }, Some(&bx)).unwrap();
        assert!((base.value / reference.value - 1.0).abs() < 1e-3);
        // closed form (pi/2)^{1/4}
        assert!((reference.value - (std::f64::consts::PI / 2.0).powf(0.25)).abs() < 1e-10);
    }

    #[test]
    fn separable_field_factorizes() {
        let f = FnField::new(1, "sep", |x: &[f64], t: f64, out: &mut [f64]| out[0] = (-x[0] * x[0]).exp() * (1.0 + t * t));
        let bx = BoxDomain::centered_cube(1, 6.0);
        let (r, q) = (Exponent::Finite(3.0), Exponent::Finite(2.5));
        let n = mixed_norm(&f, r, q, 1.0, NormGrid { space: 128, time: 64 }, Some(&bx)).unwrap();
        let fx = (std::f64::consts::PI / 3.0).powf(1.0 / 6.0);
        let (ts, tw) = simpson_rule(0.0, 1.0, 2000);
        let gt = ts.iter().zip(&tw).map(|(t, w)| w * (1.0 + t * t).powf(2.5)).sum::<f64>().powf(0.4);
        assert!((n.value / (fx * gt) - 1.0).abs() < 1e-6, "{} vs {}", n.value, fx * gt);
    }

    #[test]
    fn catalog_known_norms_within_error_estimate() {
        let cases = vec![
            (DriftSpec::SmoothBump { amplitude: 2.0, width: 0.8, center: None, direction: None }.build(2).unwrap(), 4.0),
            (
                DriftSpec::Hamiltonian { potential: crate::drift::Potential::GaussianWell, amplitude: 1.0, width: 1.0 }.build(2).unwrap(),
                6.0,
            ),
            (DriftSpec::TruncatedSingular { beta: 0.4, cutoff: 0.2, radius: 1.0 }.build(2).unwrap(), 1.0),
        ];
        for (f, half) in cases {
            let bx = BoxDomain::centered_cube(2, half);
            for (r, q) in [(Exponent::Finite(3.0), Exponent::Finite(4.0)), (Exponent::Infinite, Exponent::Finite(3.0))] {
                let known = f.known_norm(r, q, 1.0).unwrap();
                let est = mixed_norm(&f, r, q, 1.0, NormGrid { space: 96, time: 4 }, Some(&bx)).unwrap();
                let tol = est.error.max(1e-9 * known);
                assert!((est.value - known).abs() <= tol, "{}: {} vs {known} (err {})", f.name(), est.value, est.error);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn absolutely_homogeneous(c in -5.0f64..5.0, r in 1.0f64..6.0) {
            let bx = BoxDomain::centered_cube(1, 5.0);
            let g = NormGrid { space: 32, time: 4 };
            let base = mixed_norm(&bump_1d(), Exponent::Finite(r), Exponent::Finite(3.0), 1.0, g, Some(&bx)).unwrap();
            let scaled = Scaled { inner: bump_1d(), factor: c };
            let s = mixed_norm(&scaled, Exponent::Finite(r), Exponent::Finite(3.0), 1.0, g, Some(&bx)).unwrap();
            prop_assert!((s.value - c.abs() * base.value).abs() <= 1e-12 * (1.0 + base.value));
        }
    }
}
