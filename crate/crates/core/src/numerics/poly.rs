use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial in the power basis, coefficients in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PolyModel {
    coefficients: Vec<f64>,
}

impl TryFrom<Vec<f64>> for PolyModel {
    type Error = Error;

    fn try_from(coefficients: Vec<f64>) -> Result<Self> {
        PolyModel::new(coefficients)
    }
}

impl From<PolyModel> for Vec<f64> {
    fn from(p: PolyModel) -> Self {
        p.coefficients
    }
}

impl PolyModel {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("polynomial needs at least one coefficient"));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite polynomial coefficient"));
        }
        Ok(Self { coefficients })
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Horner evaluation of `sum c_k x^k`.
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

pub fn polyeval(model: &PolyModel, x: f64) -> f64 {
    model.eval(x)
}

/// Least-squares polynomial fit of the given degree.
///
/// The abscissae are mapped affinely onto `[-1, 1]` before forming the normal
/// equations, which are solved by Gaussian elimination with partial pivoting.
/// The solution is then expanded back to the power basis in the original `x`.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyModel> {
    if xs.len() != ys.len() {
        return Err(Error::dims(xs.len(), ys.len(), "polyfit xs/ys"));
    }
    if xs.len() < degree + 1 {
        return Err(Error::invalid(format!(
            "polyfit of degree {degree} needs at least {} points, got {}",
            degree + 1,
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("polyfit input contains non-finite values"));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("polyfit abscissae must be distinct"));
    }

    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let center = 0.5 * (lo + hi);
    let half = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };

    let k = degree + 1;
    let mut normal = vec![vec![0.0; k + 1]; k];
    let mut powers = vec![0.0; k];
    for (&x, &y) in xs.iter().zip(ys) {
        let z = (x - center) / half;
        powers[0] = 1.0;
        for j in 1..k {
            powers[j] = powers[j - 1] * z;
        }
        for i in 0..k {
            for j in 0..k {
                normal[i][j] += powers[i] * powers[j];
            }
            normal[i][k] += powers[i] * y;
        }
    }
    let scaled = solve_pivoted(normal)?;

    // p(x) = sum_j a_j ((x - center)/half)^j, expand binomially.
    let mut coefficients = vec![0.0; k];
    for (j, &a) in scaled.iter().enumerate() {
        let aj = a / half.powi(j as i32);
        for (i, coef) in coefficients.iter_mut().enumerate().take(j + 1) {
            *coef += aj * binomial(j, i) * (-center).powi((j - i) as i32);
        }
    }
    PolyModel::new(coefficients)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Solves an augmented system `[A | b]` by Gaussian elimination with partial pivoting.
fn solve_pivoted(mut aug: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let n = aug.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .expect("non-empty range");
        if aug[pivot][col].abs() < 1e-300 {
            return Err(Error::Degenerate("singular normal equations".into()));
        }
        aug.swap(col, pivot);
        for r in col + 1..n {
            let f = aug[r][col] / aug[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..=n {
                aug[r][c] -= f * aug[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| aug[r][c] * x[c]).sum();
        x[r] = (aug[r][n] - tail) / aug[r][r];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn two_point_line() {
        let p = polyfit(&[0.0, 1.0], &[1.0, 3.0], 1).unwrap();
        assert!(close(p.coefficients(), &[1.0, 2.0], 1e-12));
    }

    #[test]
    fn exact_cubic() {
        let p = polyfit(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 8.0, 27.0], 3).unwrap();
        assert!(close(p.coefficients(), &[0.0, 0.0, 0.0, 1.0], 1e-12));
    }

    #[test]
    fn constant_data() {
        let p = polyfit(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0], 1).unwrap();
        assert!(close(p.coefficients(), &[2.0, 0.0], 1e-12));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(PolyModel::new(vec![1.0, 2.0]).unwrap().eval(3.0), 7.0);
        assert_eq!(PolyModel::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap().eval(2.0), 8.0);
        assert_eq!(polyeval(&PolyModel::new(vec![5.0]).unwrap(), -123.4), 5.0);
    }

    #[test]
    fn errors() {
        assert!(polyfit(&[1.0, 1.0], &[0.0, 1.0], 1).is_err());
        assert!(polyfit(&[1.0], &[0.0], 1).is_err());
        assert!(polyfit(&[1.0, 2.0], &[0.0], 1).is_err());
        assert!(PolyModel::new(vec![]).is_err());
    }

    #[test]
    fn least_squares_line_through_noisy_points() {
        // residuals of the LS line are orthogonal to [1, x]
        let xs = [1.0, 2.0, 4.0, 7.0];
        let ys = [1.1, 1.9, 4.3, 6.8];
        let p = polyfit(&xs, &ys, 1).unwrap();
        let r: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - p.eval(*x)).collect();
        assert!(r.iter().sum::<f64>().abs() < 1e-12);
        assert!(r.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>().abs() < 1e-12);
    }
}
