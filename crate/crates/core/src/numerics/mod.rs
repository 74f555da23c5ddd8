//! Dense arithmetic, seeded sampling, polynomial fitting and similarity metrics.

mod linalg;
mod matrix;
mod poly;
mod rng;

pub use linalg::{min_singular_value, spectral_norm, symmetric_eigen};
pub use matrix::{dot, norm2, Matrix};
pub use poly::{polyeval, polyfit, PolyModel};
pub use rng::{derive_seed, gaussian_matrix, SeededRng, RNG_ID};

use crate::error::{Error, Result};

/// `a.b / (|a| |b|)`, clamped into `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len(), "cosine_similarity lengths"));
    }
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
