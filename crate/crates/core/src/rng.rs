//! The single deterministic random source used by random selection and the
//! synthetic generator.
//!
//! Stream: SplitMix64 with its 64-bit state initialised to the seed.
//! Derived draws, each consuming whole `u64` outputs in order:
//!
//! - `uniform()`: `(x >> 11) * 2^-53`, in `[0, 1)`.
//! - `below(m)`: `(x as u128 * m as u128) >> 64`, in `[0, m)`.
//! - `gaussian()`: Box–Muller cosine branch from two uniforms,
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)`; the sine branch is discarded.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct DetRng(SplitMix64);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng(SplitMix64::from_seed(seed.to_le_bytes()))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn below(&mut self, m: u64) -> u64 {
        ((self.next_u64() as u128 * m as u128) >> 64) as u64
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher–Yates over `0..n`: for `i` from `n-1` down to `1`, swap
    /// position `i` with `below(i + 1)`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            p.swap(i, j);
        }
        p
    }
}
