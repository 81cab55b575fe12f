//! Counter-based pseudo-random numbers.
//!
//! Every random draw in the crate comes from [`CounterRng`], a SplitMix64
//! generator evaluated in counter mode: the `i`-th 64-bit output for a seed
//! `s` is
//!
//! ```text
//! z  = s + (i + 1) * 0x9E3779B97F4A7C15            (wrapping)
//! z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9        (wrapping)
//! z  = (z ^ (z >> 27)) * 0x94D049BB133111EB        (wrapping)
//! out = z ^ (z >> 31)
//! ```
//!
//! Uniforms take the top 53 bits: `u = (out >> 11) * 2^-53`, in `[0, 1)`.
//! Standard normals use one Box-Muller transform per pair of uniforms
//! `(u1, u2)`: `sqrt(-2 ln(1 - u1)) * cos(2π u2)`. The stream is therefore
//! reproducible bit-for-bit in any language with IEEE doubles.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
pub const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
pub const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;
pub const GENERATOR_NAME: &str = "splitmix64-counter";

/// Finalizer of SplitMix64.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent stream derived from `seed` and a stream label.
    pub fn derived(seed: u64, stream: u64) -> Self {
        Self::new(mix64(seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Output at an arbitrary counter position, without advancing.
    pub fn at(&self, index: u64) -> u64 {
        mix64(
            self.seed
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = self.at(self.counter);
        self.counter += 1;
        out
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}
