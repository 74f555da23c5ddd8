//! Small dense eigen/norm routines.
//!
//! Spectral norms use power iteration on `A^T A`. Symmetric eigendecompositions
//! (used for the smallest singular value and for whitening) use cyclic Jacobi
//! rotations, which are exact enough at the sizes used here (n <= ~64).

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};

pub const POWER_ITERATION_TOL: f64 = 1e-10;
pub const POWER_ITERATION_CAP: usize = 10_000;

/// Largest singular value by power iteration on `A^T A`.
pub fn spectral_norm(a: &Matrix) -> f64 {
    let n = a.cols();
    if n == 0 || a.rows() == 0 {
        return 0.0;
    }
    let ata = a.matmul_tn(a).expect("A^T A is always conformable");
    // Fixed, non-degenerate start vector so results are reproducible.
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * (1.7 * i as f64 + 0.3).sin())
        .collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut lambda = 0.0;
    let mut w = vec![0.0; n];
    for _ in 0..POWER_ITERATION_CAP {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = dot(ata.row(i), &v);
        }
        let next = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        let converged = (next - lambda).abs() <= POWER_ITERATION_TOL * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    // Rayleigh quotient at the final vector.
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = dot(ata.row(i), &v);
    }
    dot(&v, &w).max(0.0).sqrt()
}

/// Eigen-decomposition of a symmetric matrix: `(eigenvalues, V)` with
/// eigenvectors in the columns of `V`, eigenvalues ascending.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !a.is_square() {
        return Err(Error::dims(a.rows(), a.cols(), "symmetric_eigen expects square"));
    }
    let n = a.rows();
    let scale = a.frobenius_norm();
    let asym = a.max_abs_diff(&a.transpose());
    if asym > 1e-10 * scale.max(1.0) {
        return Err(Error::invalid(format!("matrix is not symmetric (max |A-A^T| = {asym:e})")));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m.get(p, q).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok((values, vectors))
}

/// Smallest singular value, from the smallest eigenvalue of `A^T A`.
pub fn min_singular_value(a: &Matrix) -> Result<f64> {
    let ata = a.matmul_tn(a)?;
    // symmetrize away rounding so the Jacobi symmetry check is exact
    let sym = ata.add(&ata.transpose())?.scale(0.5);
    let (values, _) = symmetric_eigen(&sym)?;
    Ok(values.first().copied().unwrap_or(0.0).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let d = Matrix::new(3, 3, vec![2.0, 0.0, 0.0, 0.0, -5.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((spectral_norm(&d) - 5.0).abs() < 1e-9);
        assert!((min_singular_value(&d).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&Matrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = Matrix::new(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]).unwrap();
        let (vals, v) = symmetric_eigen(&a).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let lam = Matrix::from_fn(3, 3, |r, c| if r == c { vals[r] } else { 0.0 });
        let back = v.matmul(&lam).unwrap().matmul_nt(&v).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
        let vtv = v.matmul_tn(&v).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_jacobi() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (vals, _) = symmetric_eigen(&a.matmul_tn(&a).unwrap()).unwrap();
        assert!((spectral_norm(&a) - vals[1].sqrt()).abs() < 1e-9);
    }
}
