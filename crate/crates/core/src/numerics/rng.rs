use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Identifier of the generator stack, written into every run manifest.
pub const RNG_ID: &str = "chacha8(rand_chacha 0.9)+ziggurat-normal(rand_distr 0.5)";

/// Seeded, single-owner random stream.
///
/// Parallel work must not share one of these; derive per-worker streams with
/// [`SeededRng::child`].
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ID
    }

    /// Independent stream derived from this seed and `index`.
    ///
    /// Depends only on `(seed, index)`, never on how much of the parent stream
    /// has been consumed.
    pub fn child(&self, index: u64) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, index))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> Result<f64> {
        let dist = Normal::new(mean, std).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(dist.sample(&mut self.inner))
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    pub fn index(&mut self, upper: usize) -> usize {
        self.inner.random_range(0..upper)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// SplitMix64-style mixing of a parent seed with a child index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Matrix of i.i.d. `N(0, std^2)` entries drawn row-major from `rng`.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut SeededRng) -> Result<Matrix> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::invalid(format!("gaussian std must be positive, got {std}")));
    }
    let data = (0..rows * cols).map(|_| std * rng.standard_normal()).collect();
    Matrix::new(rows, cols, data)
}
