//! Counter-based random stream shared by every experiment.
//!
//! Word `i` (0-based) of the stream for seed `s` is
//! `splitmix64_mix(s + (i + 1) * 0x9E3779B97F4A7C15)` with wrapping
//! arithmetic, which is exactly the SplitMix64 sequence seeded with `s`.
//! Because each word depends only on `(seed, i)`, a shard can start at any
//! counter without replaying the words before it.
//!
//! Derived draws:
//! - `uniform()`: `(word >> 11) * 2^-53`, in `[0, 1)`.
//! - `below(n)`: `(word * n) >> 64` on 128-bit integers, in `[0, n)`.
//! - `normal()`: Box-Muller cosine branch from two consecutive words,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Stream positioned at word `counter`.
    pub fn at(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn word(seed: u64, index: u64) -> u64 {
        splitmix64_mix(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let w = Self::word(self.seed, self.counter);
        self.counter = self.counter.wrapping_add(1);
        w
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
