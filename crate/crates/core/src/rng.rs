//! Seeded random streams.
//!
//! Every component draws from its own ChaCha8 stream derived from a single
//! master seed: `derive_seed(master, offset, index)` mixes the component
//! offset and a per-item index (episode, trajectory) through SplitMix64.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

pub type Stream = ChaCha8Rng;

/// Environment / task sampling.
pub const OFFSET_ENV: u64 = 1;
/// Policy action and option sampling.
pub const OFFSET_POLICY: u64 = 2;
/// E-step latent sampling.
pub const OFFSET_ESTEP: u64 = 3;
/// Minibatch shuffling.
pub const OFFSET_MINIBATCH: u64 = 4;
/// Network initialization (not one of the training streams).
pub const OFFSET_INIT: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, offset: u64, index: u64) -> u64 {
    splitmix(splitmix(master.wrapping_add(offset)) ^ splitmix(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(master: u64, offset: u64, index: u64) -> Stream {
    stream(derive_seed(master, offset, index))
}

/// Uniform in `[0, 1)` with 53 random bits.
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[lo, hi)`.
pub fn uniform_range<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2)
}

/// Uniform integer in `0..n`.
pub fn below<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0, "below(0)");
    ((uniform(rng) * n as f64) as usize).min(n - 1)
}

/// Draws an index from a probability vector (need not be exactly
/// normalized; the last index absorbs rounding).
pub fn categorical<R: RngCore + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = uniform(rng) * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples from a log-probability vector.
pub fn categorical_log<R: RngCore + ?Sized>(rng: &mut R, logp: &[f64]) -> usize {
    let probs: alloc::vec::Vec<f64> = logp.iter().map(|&l| math::exp(l)).collect();
    categorical(rng, &probs)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: RngCore + ?Sized>(rng: &mut R, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = below(rng, i + 1);
        xs.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = derived(7, OFFSET_ENV, 3);
        let mut b = derived(7, OFFSET_ENV, 3);
        for _ in 0..10 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(derive_seed(7, OFFSET_ENV, 3), derive_seed(7, OFFSET_POLICY, 3));
        assert_ne!(derive_seed(7, OFFSET_ENV, 3), derive_seed(7, OFFSET_ENV, 4));
    }

    #[test]
    fn normal_moments() {
        let mut r = stream(1);
        let n = 20000;
        let xs: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        assert!(m.abs() < 0.03, "{m}");
        assert!((v - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn categorical_frequencies() {
        let mut r = stream(2);
        let p = [0.2, 0.0, 0.8];
        let mut counts = [0usize; 3];
        for _ in 0..10000 {
            counts[categorical(&mut r, &p)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 10000.0 - 0.2).abs() < 0.02);
    }
}
