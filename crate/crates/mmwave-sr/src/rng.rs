//! Deterministic, platform-stable random number generation.
//!
//! Every stochastic component of the pipeline (noise corruption, RANSAC,
//! synthetic scenes, training batches) draws from a [`SeededRng`] so that a
//! `(config, seed)` pair reproduces a run bit-for-bit. ChaCha8 gives an
//! identical stream on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded RNG handle. Single-owner: parallel pipelines derive independent
/// child seeds instead of sharing a stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Deterministically derives an independent child generator. `stream`
    /// selects among children; distinct streams never collide for a fixed
    /// parent seed.
    pub fn child(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        SeededRng {
            seed: self.seed,
            inner,
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(rand_distr::StandardNormal)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Exponential(1) draw.
    pub fn exp1(&mut self) -> f64 {
        self.inner.sample(rand_distr::Exp1)
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen_bool(p.clamp(0.0, 1.0))
    }

    /// Escape hatch for `rand` adapters (distributions, shuffling).
    pub fn into_rng(self) -> ChaCha8Rng {
        self.inner
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}
