//! Seeded random stream shared by generation and sensor noise.
//!
//! The generator is ChaCha8 seeded through `SeedableRng::seed_from_u64`,
//! which rand_core documents as a fixed, portable expansion. Every derived
//! quantity goes through the mappings below rather than rand's
//! distribution helpers, so outputs only depend on the raw 64-bit stream:
//!
//! * `unit()`   = `(next_u64 >> 11) * 2^-53`, uniform in `[0, 1)`
//! * `range(a, b)` = `a + (b - a) * unit()`
//! * `below(n)` = rejection sampling on the top bits of `next_u64`
//! * `gaussian()` = `rand_distr::StandardNormal` (ziggurat) on the same stream

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn seed_from(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named purpose, derived from a base seed.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let bits = 64 - (n - 1).leading_zeros();
        loop {
            let v = if bits == 0 { 0 } else { self.next_u64() >> (64 - bits) };
            if v < n {
                return v as usize;
            }
        }
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle driven by [`SimRng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
