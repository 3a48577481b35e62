//! Row-major `d x d` matrix helpers for the flow hot loops.

use nalgebra::DMatrix;

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// `out = a · b`.
pub fn mat_mul(a: &[f64], b: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
        }
    }
}

pub fn transpose(a: &[f64], d: usize) -> Vec<f64> {
    let mut t = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            t[j * d + i] = a[i * d + j];
        }
    }
    t
}

/// `A^T v`.
pub fn mat_t_vec(a: &[f64], v: &[f64], d: usize, out: &mut [f64]) {
    for j in 0..d {
        out[j] = (0..d).map(|i| a[i * d + j] * v[i]).sum();
    }
}

/// `A v`.
pub fn mat_vec(a: &[f64], v: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        out[i] = (0..d).map(|j| a[i * d + j] * v[j]).sum();
    }
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a - b‖_F`.
pub fn frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Entrywise-sum norm `Σ |a_ij|`.
pub fn entry_sum_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn det(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        _ => DMatrix::from_row_slice(d, d, a).determinant(),
    }
}

/// Spectral norm.
pub fn operator_norm(a: &[f64], d: usize) -> f64 {
    DMatrix::from_row_slice(d, d, a).singular_values().max()
}

/// Matrix exponential `e^{A t}`.
pub fn expm(a: &[f64], d: usize, t: f64) -> Vec<f64> {
    let m = DMatrix::from_row_slice(d, d, a) * t;
    let e = m.exp();
    (0..d * d).map(|k| e[(k / d, k % d)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_exponential() {
        let a = [0.0, 1.0, -1.0, 0.0];
        let e = expm(&a, 2, std::f64::consts::FRAC_PI_2);
        assert!(frobenius_diff(&e, &[0.0, 1.0, -1.0, 0.0]) < 1e-12);
        assert!((det(&e, 2) - 1.0).abs() < 1e-12);
        assert!((operator_norm(&e, 2) - 1.0).abs() < 1e-12);
        let mut p = vec![0.0; 4];
        mat_mul(&e, &transpose(&e, 2), 2, &mut p);
        assert!(frobenius_diff(&p, &identity(2)) < 1e-12);
        assert!((entry_sum_norm(&identity(3)) - 3.0).abs() < 1e-15);
        let m = [2.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 3.0];
        assert!((det(&m, 3) - 6.0).abs() < 1e-12);
    }
}
