//! Counter-based, splittable random streams.
//!
//! A [`Rng`] is identified by `(seed, stream)`. The ChaCha block function is
//! keyed by the seed and the stream id selects an independent nonce, so two
//! generators with the same pair always agree and distinct streams never
//! overlap.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Well-known stream ids so every consumer of randomness draws from its own
/// sequence.
pub mod streams {
    pub const SPLITS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const SAMPLING: u64 = 5;
    pub const TUNER: u64 = 6;
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child generator for sub-stream `tag`; depends only on
    /// `(seed, stream, tag)`, never on how much of `self` was consumed.
    pub fn split(&self, tag: u64) -> Rng {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5851_f42d)));
        Rng::with_stream(child_seed, tag)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `low..=high`.
    pub fn int_range(&mut self, low: i64, high: i64) -> i64 {
        self.inner.random_range(low..=high)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `n` standard-normal draws.
    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_draw() {
        assert!(Rng::new(1).normals(0).is_empty());
    }

    #[test]
    fn same_seed_same_sequence() {
        let a = Rng::with_stream(42, 7).normals(64);
        let b = Rng::with_stream(42, 7).normals(64);
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let a = Rng::with_stream(42, 1).normals(8);
        let b = Rng::with_stream(42, 2).normals(8);
        assert_ne!(a, b);
    }

    #[test]
    fn split_ignores_parent_consumption() {
        let parent = Rng::new(9);
        let mut used = parent.clone();
        used.normals(100);
        assert_eq!(parent.split(3).normals(4), used.split(3).normals(4));
    }

    #[test]
    fn million_draws_have_unit_moments() {
        let draws = Rng::new(2024).normals(1_000_000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((libm::sqrt(var) - 1.0).abs() < 0.01, "std {}", libm::sqrt(var));
    }
}
