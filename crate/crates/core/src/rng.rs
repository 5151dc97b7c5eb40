//! Seeded random source shared by augmentation and training.
//!
//! Backed by ChaCha8, whose output stream is specified independently of
//! platform and word size. Parallel work never shares a stream: each worker
//! derives its own generator with [`Rng::split`] (seed XOR stream index).

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child seed for stream `index`.
    pub fn derive_seed(seed: u64, index: u64) -> u64 {
        seed ^ index
    }

    /// Independent generator for stream `index`, derived from the construction seed.
    pub fn split(&self, index: u64) -> Rng {
        Rng::new(Self::derive_seed(self.seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi]`; returns `lo` exactly when `lo == hi`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.uniform();
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) * u
        }
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
