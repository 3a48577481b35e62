//! One-dimensional Gauss-Legendre panels shared by the quadrature code.

use gauss_quad::GaussLegendre;

/// Gauss-Legendre rule on `[-1, 1]` stored as plain node and weight vectors.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn new(order: usize) -> Self {
        let gl = GaussLegendre::new(order.max(1).try_into().expect("order is nonzero"));
        let (nodes, weights) = gl.as_node_weight_pairs().iter().copied().unzip();
        Rule { nodes, weights }
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (m + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Sum over consecutive panels `[breaks[i], breaks[i + 1]]`.
    pub fn panels(&self, breaks: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        breaks.windows(2).filter(|w| w[1] > w[0]).map(|w| self.integrate(w[0], w[1], &mut f)).sum()
    }
}

/// Sorted, deduplicated breakpoints clipped to `[lo, hi]`, both ends included.
pub fn breakpoints(lo: f64, hi: f64, interior: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut b: Vec<f64> = interior.into_iter().filter(|x| *x > lo && *x < hi).collect();
    b.push(lo);
    b.push(hi);
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    b
}

/// Splits every panel into `k` equal pieces.
pub fn refine(breaks: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((breaks.len() - 1) * k + 1);
    for w in breaks.windows(2) {
        for i in 0..k {
            out.push(w[0] + (w[1] - w[0]) * i as f64 / k as f64);
        }
    }
    out.extend(breaks.last());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let r = Rule::new(5);
        let v = r.integrate(-1.0, 2.0, |x| x.powi(9));
        assert!((v - (2f64.powi(10) - 1.0) / 10.0).abs() < 1e-10);
        let b = breakpoints(0.0, 1.0, [0.5, 0.5, 2.0, -1.0]);
        assert_eq!(b, vec![0.0, 0.5, 1.0]);
        assert_eq!(refine(&b, 2), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let v = r.panels(&b, |x| (x - 0.5).abs());
        assert!((v - 0.25).abs() < 1e-14);
    }
}
