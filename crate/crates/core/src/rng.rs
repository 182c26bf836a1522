//! Counter-based Gaussian increments keyed by `(seed, path, step)`.
//!
//! Each path owns a ChaCha stream (`stream = path`); the draw for a step sits
//! at a fixed word offset, so any step can be regenerated without replaying
//! earlier ones and the assignment of paths to workers cannot change values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Word budget per step. The ziggurat sampler almost always takes one `u64`;
/// rejections past this budget have probability far below anything observable.
const WORDS_PER_STEP: u128 = 64;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self { rng }
    }

    /// Standard normal draw assigned to `step`.
    pub fn standard_normal(&mut self, step: usize) -> f64 {
        self.rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        self.rng.sample(StandardNormal)
    }

    /// Brownian increment over a step of length `dt`.
    pub fn increment(&mut self, step: usize, dt: f64) -> f64 {
        self.standard_normal(step) * dt.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_depend_only_on_key() {
        let mut a = NoiseStream::new(9, 3);
        let forward: Vec<f64> = (0..20).map(|k| a.standard_normal(k)).collect();
        let mut b = NoiseStream::new(9, 3);
        let backward: Vec<f64> = (0..20).rev().map(|k| b.standard_normal(k)).collect();
        assert!(forward.iter().zip(backward.iter().rev()).all(|(x, y)| x == y));
        let mut c = NoiseStream::new(9, 4);
        assert_ne!(c.standard_normal(0), forward[0]);
        let mut d = NoiseStream::new(10, 3);
        assert_ne!(d.standard_normal(0), forward[0]);
    }

    #[test]
    fn moments_are_standard() {
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for p in 0..(n / 100) {
            let mut s = NoiseStream::new(1, p as u64);
            for k in 0..100 {
                let z = s.standard_normal(k);
                sum += z;
                sq += z * z;
            }
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        // 5 standard errors
        assert!(mean.abs() < 5.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt());
    }
}
