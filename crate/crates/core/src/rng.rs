//! Counter-based, splittable random number generation.
//!
//! All randomness in the crate comes from [`Rng`], a SplitMix64 stream keyed
//! by a 64-bit seed. The generator is small enough to re-implement in any
//! language, which keeps generated datasets and training runs comparable
//! across implementations. The exact definition:
//!
//! ```text
//! GOLDEN = 0x9E3779B97F4A7C15
//! mix(v):  v ^= v >> 30; v *= 0xBF58476D1CE4E5B9;
//!          v ^= v >> 27; v *= 0x94D049BB133111EB; v ^= v >> 31
//! next_u64: counter += 1; return mix(key + counter * GOLDEN)   (wrapping)
//! split(s): Rng { key: mix(key ^ mix(s + GOLDEN)), counter: 0 }
//! uniform:  (next_u64 >> 11) * 2^-53                             in [0, 1)
//! normal:   u1 = 1 - uniform, u2 = uniform,
//!           sqrt(-2 ln u1) * cos(2 pi u2)                        (Box-Muller)
//! below(n): (next_u64 * n) >> 64                                 (128-bit)
//! ```
//!
//! Each normal draw consumes exactly two words, so a stream that emits a
//! fixed number of draws per row yields prefix-stable datasets: the first
//! `n` rows do not depend on how many rows are generated in total.

use std::f64::consts::TAU;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut v: u64) -> u64 {
    v ^= v >> 30;
    v = v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v ^= v >> 27;
    v = v.wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^ (v >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: seed,
            counter: 0,
        }
    }

    /// Derives an independent child stream. Splitting does not advance `self`.
    pub fn split(&self, stream: u64) -> Rng {
        Rng {
            key: mix(self.key ^ mix(stream.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` in draw order (partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k.min(n) {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k.min(n));
        pool
    }
}

/// Combines a base seed with a list of labels into a new seed.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix(base.wrapping_add(GOLDEN)), |acc, &l| {
            mix(acc ^ mix(l.wrapping_add(GOLDEN)))
        })
}
