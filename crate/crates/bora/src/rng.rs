//! Seeded pseudo-random streams and Kaiming-style initialization.
//!
//! The generator is xoshiro256** seeded through splitmix64, implemented
//! directly so the streams are bit-identical on every platform regardless
//! of external crate versions.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Reproducible seed for a generator stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed(u64);

impl Seed {
    pub fn new(value: u64) -> Self {
        Seed(value)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

/// xoshiro256** with splitmix64 state expansion.
#[derive(Debug, Clone)]
pub struct Rng {
    state: [u64; 4],
}

impl Rng {
    pub fn from_seed(seed: Seed) -> Self {
        let mut sm = seed.0;
        let mut state = [0u64; 4];
        for slot in &mut state {
            sm = sm.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = sm;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            *slot = z ^ (z >> 31);
        }
        Rng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [low, high).
    pub fn next_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }
}

/// Deterministic stream of `count` uniform values in [low, high).
pub fn uniform_stream(seed: Seed, count: usize, low: f64, high: f64) -> Result<Vec<f64>> {
    if low >= high {
        return Err(Error::Argument(format!(
            "uniform range requires low < high, got [{low}, {high})"
        )));
    }
    let mut rng = Rng::from_seed(seed);
    Ok((0..count).map(|_| rng.next_range(low, high)).collect())
}

/// Kaiming-uniform matrix: entries i.i.d. in [-bound, bound] with
/// bound = 1/sqrt(fan_in).
pub fn kaiming_uniform(seed: Seed, rows: usize, cols: usize, fan_in: usize) -> Result<DenseMatrix> {
    if fan_in == 0 {
        return Err(Error::Argument("kaiming fan_in must be at least 1".into()));
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = uniform_stream(seed, rows * cols, -bound, bound)?;
    DenseMatrix::from_vec(rows, cols, data)
}
