//! Axis-aligned boxes and regular lattices of initial points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower_0, upper_0] x ... x [lower_{d-1}, upper_{d-1}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidParameter(format!("box corners have dimensions {} and {}", lower.len(), upper.len())));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidParameter("box must have lower < upper on every axis".into()));
        }
        Ok(BoxDomain { lower, upper })
    }

    /// The cube `[-half, half]^d`.
    pub fn centered_cube(d: usize, half: f64) -> Self {
        BoxDomain { lower: vec![-half; d], upper: vec![half; d] }
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        BoxDomain { lower: vec![lo; d], upper: vec![hi; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// True when `other` lies inside `self` up to `tol` on every face.
    pub fn covers(&self, other: &BoxDomain, tol: f64) -> bool {
        self.dim() == other.dim() && (0..self.dim()).all(|i| self.lower[i] <= other.lower[i] + tol && self.upper[i] >= other.upper[i] - tol)
    }
}

/// Regular tensor lattice of points with trapezoid weights.
///
/// Points are stored flat, `points[i * d .. (i + 1) * d]`, with the last axis
/// varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub domain: BoxDomain,
    pub per_axis: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Lattice {
    /// `per_axis >= 2` points on each axis including both faces.
    pub fn regular(domain: BoxDomain, per_axis: usize) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::InvalidParameter("lattice needs at least 2 points per axis".into()));
        }
        let d = domain.dim();
        let n = per_axis.pow(d as u32);
        let steps: Vec<f64> = (0..d).map(|i| (domain.upper[i] - domain.lower[i]) / (per_axis - 1) as f64).collect();
        let mut points = Vec::with_capacity(n * d);
        let mut weights = Vec::with_capacity(n);
        let mut idx = vec![0usize; d];
        for _ in 0..n {
            let mut w = 1.0;
            for axis in 0..d {
                points.push(domain.lower[axis] + idx[axis] as f64 * steps[axis]);
                let edge = idx[axis] == 0 || idx[axis] == per_axis - 1;
                w *= if edge { 0.5 * steps[axis] } else { steps[axis] };
            }
            weights.push(w);
            for axis in (0..d).rev() {
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(Lattice { domain, per_axis, points, weights })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    /// Largest axis spacing.
    pub fn spacing(&self) -> f64 {
        (0..self.dim()).map(|i| (self.domain.upper[i] - self.domain.lower[i]) / (self.per_axis - 1) as f64).fold(0.0, f64::max)
    }
}

/// Smallest nonzero distance between two points of a flat point list.
pub fn min_spacing(points: &[f64], d: usize) -> f64 {
    let n = points.len() / d;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = euclid(&points[i * d..(i + 1) * d], &points[j * d..(j + 1) * d]);
            if dist > 0.0 && dist < best {
                best = dist;
            }
        }
    }
    best
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
