//! Small statistical helpers: sample moments, batch means, Wilson intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Minimum number of batches used by [`batch_means`].
pub const MIN_BATCHES: usize = 30;

/// Mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Running sums that merge associatively; merging in a fixed order gives
/// reproducible results.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(mut self, other: Moments) -> Moments {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let m = self.mean();
        ((self.sum_sq - self.n as f64 * m * m) / (self.n - 1) as f64).max(0.0)
    }

    pub fn mean_se(&self) -> MeanSe {
        MeanSe { mean: self.mean(), se: (self.variance() / self.n as f64).sqrt(), n: self.n }
    }
}

/// Plain sample mean and standard error (two-pass).
pub fn mean_se(x: &[f64]) -> MeanSe {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    MeanSe { mean, se: (var / n as f64).sqrt(), n }
}

/// Batch-means standard error with `n_batches >= 30` contiguous batches.
pub fn batch_means(x: &[f64], n_batches: usize) -> Result<MeanSe> {
    let b = n_batches.max(MIN_BATCHES);
    if x.len() < b {
        return Err(Error::InsufficientData(format!("{} samples cannot fill {b} batches", x.len())));
    }
    let size = x.len() / b;
    let means: Vec<f64> = (0..b).map(|i| x[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let bm = mean_se(&means);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    Ok(MeanSe { mean, se: bm.se, n: x.len() })
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided Bonferroni critical value for `m` tests at family level `alpha`.
pub fn bonferroni_z(alpha: f64, m: usize) -> f64 {
    normal_quantile(1.0 - alpha / (2.0 * m.max(1) as f64))
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}
