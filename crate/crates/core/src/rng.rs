//! Counter-addressed random streams.
//!
//! Every stream is a ChaCha8 keystream selected by `(seed, stream)`; a block
//! of draws can be addressed directly by word position, so any `(path, step)`
//! pair is regenerated without replaying earlier draws.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * TWO_POW_M53
}

/// Uniform in `(0, 1]`.
#[inline]
pub fn uniform_open0(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * TWO_POW_M53
}

/// Two independent standard normals by Box-Muller; always consumes exactly
/// four 32-bit words.
#[inline]
pub fn normal_pair(rng: &mut impl RngCore) -> (f64, f64) {
    let u1 = uniform_open0(rng);
    let u2 = uniform(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Fills `out` with standard normals; consumes `4 * ceil(len / 2)` words.
pub fn fill_normals(rng: &mut impl RngCore, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = normal_pair(rng);
        pair[0] = a;
        pair[1] = b;
    }
    if let [last] = chunks.into_remainder() {
        *last = normal_pair(rng).0;
    }
}

/// 32-bit words consumed by [`fill_normals`] for `n` values.
pub const fn normal_words(n: usize) -> u128 {
    (4 * n.div_ceil(2)) as u128
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = stream_rng(7, 3);
        let mut b = stream_rng(7, 3);
        let mut c = stream_rng(7, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn word_accounting_matches_fill() {
        let mut a = stream_rng(1, 0);
        let mut v = vec![0.0; 3];
        fill_normals(&mut a, &mut v);
        assert_eq!(a.get_word_pos(), normal_words(3));
        let mut b = stream_rng(1, 0);
        b.set_word_pos(normal_words(3));
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut rng = stream_rng(11, 0);
        let n = 200_000;
        let mut v = vec![0.0; n];
        fill_normals(&mut rng, &mut v);
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.01);
        let u = uniform_open0(&mut rng);
        assert!(u > 0.0 && u <= 1.0);
    }
}
