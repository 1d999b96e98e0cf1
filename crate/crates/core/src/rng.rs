//! Deterministic random source shared by initialization, dropout and batch
//! sampling.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`), whose output stream is
//! fully specified and identical on every platform. A seed selects the key and
//! a stream number selects one of 2^64 independent streams under that key, so
//! the training loop can hand weight init, dropout masks and minibatch draws
//! their own non-interfering sequences.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream used for parameter initialization.
pub const STREAM_INIT: u64 = 0;
/// Stream used for dropout masks.
pub const STREAM_DROPOUT: u64 = 1;
/// Stream used for minibatch sampling.
pub const STREAM_SAMPLING: u64 = 2;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = Rng::with_stream(7, STREAM_INIT);
        let mut b = Rng::with_stream(7, STREAM_DROPOUT);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn known_first_output() {
        // Pins the generator: a change of algorithm or seeding scheme breaks
        // checkpoint reproducibility and must show up here.
        let mut r = Rng::new(0);
        assert_eq!(r.next_u64(), 13080132717333068652);
    }
}
