//! Deterministic random streams.
//!
//! Every stochastic routine in the crate draws from a [`Rng`] seeded
//! explicitly by the caller, so identical seeds give bitwise-identical
//! results on every platform. ChaCha8 keeps the stream independent of the
//! platform's default RNG.

use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Seeded deterministic generator.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Widening multiply keeps the draw unbiased for any n that fits u64.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Sample an index from an unnormalized nonnegative weight vector.
    ///
    /// Falls back to the last positive-weight index when accumulated
    /// rounding leaves the draw past the total mass.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        let mut u = self.unit() * total;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
                if u < w {
                    return i;
                }
                u -= w;
            }
        }
        last_positive
    }

    /// `k` distinct indices from `0..n`, in selection order.
    pub fn distinct_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// A point on the `k`-simplex, uniform (flat Dirichlet), via normalized
    /// exponential draws.
    pub fn simplex(&mut self, k: usize) -> Vec<f64> {
        debug_assert!(k > 0);
        let mut w: Vec<f64> = (0..k).map(|_| -libm::log(1.0 - self.unit())).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            for x in &mut w {
                *x /= total;
            }
        } else {
            w.fill(1.0 / k as f64);
        }
        w
    }
}
