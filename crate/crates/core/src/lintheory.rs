//! Closed-form horizon gradients for deep linear chains on whitened data.
//!
//! With whitened inputs the loss reduces to `0.5 |W_0^T - Phi|_F^2` where
//! `W_a^b = W(b-1) ... W(a)` and `Phi` is the input/label cross-covariance. The
//! horizon-`h` gradient of block `t` with window end `s = min(t + h, T)` is
//!
//! ```text
//! (W_{t+1}^s)^T (W_0^s - Phi) (W_0^t)^T
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{fmt_f64, Csv};
use crate::network::{Batch, Network};
use crate::numerics::{
    cosine_similarity, gaussian_matrix, min_singular_value, polyfit, spectral_norm, Matrix, SeededRng,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearChain {
    weights: Vec<Matrix>,
    phi: Matrix,
    perturbation_bound: f64,
}

impl LinearChain {
    pub fn new(weights: Vec<Matrix>, phi: Matrix, perturbation_bound: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("linear chain needs at least one layer"));
        }
        let n = phi.rows();
        if !phi.is_square() {
            return Err(Error::dims(phi.rows(), phi.cols(), "phi must be square"));
        }
        for w in &weights {
            if w.rows() != n || w.cols() != n {
                return Err(Error::dims(n, w.rows(), "chain weights must be n x n"));
            }
        }
        if !(perturbation_bound >= 0.0) {
            return Err(Error::invalid("perturbation bound must be non-negative"));
        }
        Ok(Self {
            weights,
            phi,
            perturbation_bound,
        })
    }

    /// `W(t) = I + W~(t) / T` with Gaussian `W~(t)` rescaled onto `|W~(t)|_2 = c`
    /// whenever its raw norm exceeds `c`; `Phi` has standard Gaussian entries.
    pub fn perturbed_identity(n: usize, depth: usize, c: f64, rng: &mut SeededRng) -> Result<Self> {
        if n == 0 || depth == 0 {
            return Err(Error::invalid("chain size must be positive"));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::invalid("perturbation bound must be non-negative"));
        }
        let eye = Matrix::identity(n);
        let mut weights = Vec::with_capacity(depth);
        for _ in 0..depth {
            let raw = gaussian_matrix(n, n, 1.0, rng)?;
            let pert = if c == 0.0 {
                Matrix::zeros(n, n)
            } else {
                let norm = spectral_norm(&raw);
                if norm > c {
                    raw.scale(c / norm)
                } else {
                    raw
                }
            };
            weights.push(eye.add(&pert.scale(1.0 / depth as f64))?);
        }
        let phi = gaussian_matrix(n, n, 1.0, rng)?;
        Self::new(weights, phi, c)
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }
    pub fn dim(&self) -> usize {
        self.phi.rows()
    }
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }
    pub fn phi(&self) -> &Matrix {
        &self.phi
    }
    pub fn perturbation_bound(&self) -> f64 {
        self.perturbation_bound
    }
}

/// Network and batch whose mean loss is exactly `0.5 |W_0^T - Phi|_F^2`:
/// inputs `sqrt(n) I` and labels `sqrt(n) Phi^T` row-wise.
pub fn whitened_problem(chain: &LinearChain) -> Result<(Network, Batch, Batch)> {
    let n = chain.dim();
    let scale = (n as f64).sqrt();
    let x0 = Matrix::identity(n).scale(scale);
    let y = chain.phi.transpose().scale(scale);
    Ok((Network::linear_chain(&chain.weights)?, x0, y))
}

/// `W(t2-1) ... W(t1)`; the identity when `t1 == t2`.
pub fn partial_product(chain: &LinearChain, t1: usize, t2: usize) -> Result<Matrix> {
    if t1 > t2 || t2 > chain.depth() {
        return Err(Error::InvalidInput(format!(
            "partial product needs 0 <= t1 <= t2 <= {}, got ({t1}, {t2})",
            chain.depth()
        )));
    }
    let mut acc = Matrix::identity(chain.dim());
    for w in &chain.weights[t1..t2] {
        acc = w.matmul(&acc)?;
    }
    Ok(acc)
}

/// Gradient of block `t` for horizon `h`, as an `n x n` matrix.
pub fn closed_form_gradient(chain: &LinearChain, t: usize, h: usize) -> Result<Matrix> {
    let depth = chain.depth();
    if t >= depth {
        return Err(Error::OutOfRange {
            index: t,
            lo: 0,
            hi: depth - 1,
            context: "closed-form block",
        });
    }
    if h == 0 || h > depth {
        return Err(Error::OutOfRange {
            index: h,
            lo: 1,
            hi: depth,
            context: "closed-form horizon",
        });
    }
    let end = (t + h).min(depth);
    let after = partial_product(chain, t + 1, end)?;
    let before = partial_product(chain, 0, t)?;
    let residual = partial_product(chain, 0, end)?.sub(&chain.phi)?;
    after.matmul_tn(&residual)?.matmul_nt(&before)
}

/// All block gradients for horizon `h`, reusing prefix products.
pub fn closed_form_horizon_gradient(chain: &LinearChain, h: usize) -> Result<Vec<Matrix>> {
    let depth = chain.depth();
    if h == 0 || h > depth {
        return Err(Error::OutOfRange {
            index: h,
            lo: 1,
            hi: depth,
            context: "closed-form horizon",
        });
    }
    let mut prefix = Vec::with_capacity(depth + 1);
    prefix.push(Matrix::identity(chain.dim()));
    for w in &chain.weights {
        let next = w.matmul(prefix.last().expect("non-empty"))?;
        prefix.push(next);
    }
    let mut out = Vec::with_capacity(depth);
    for t in 0..depth {
        let end = (t + h).min(depth);
        let mut after = Matrix::identity(chain.dim());
        for w in &chain.weights[t + 1..end] {
            after = w.matmul(&after)?;
        }
        let residual = prefix[end].sub(&chain.phi)?;
        out.push(after.matmul_tn(&residual)?.matmul_nt(&prefix[t])?);
    }
    Ok(out)
}

/// `cos(theta_h)` between the concatenated closed-form gradients for `h` and `T`.
pub fn closed_form_cosine(chain: &LinearChain, h: usize) -> Result<f64> {
    let flat = |ms: Vec<Matrix>| -> Vec<f64> { ms.into_iter().flat_map(Matrix::into_vec).collect() };
    let gh = flat(closed_form_horizon_gradient(chain, h)?);
    let gt = flat(closed_form_horizon_gradient(chain, chain.depth())?);
    cosine_similarity(&gh, &gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub alpha: f64,
    pub horizon: usize,
    pub mean_one_minus_cos2: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln(1 - cos^2)` against `ln(1 - alpha)` over rows with `alpha < 1`.
    pub slope: f64,
    pub seeds: Vec<u64>,
    pub dim: usize,
    pub depth: usize,
    pub perturbation_bound: f64,
}

impl ScalingReport {
    /// `alpha,mean_one_minus_cos2,stderr` rows and a `slope=` footer.
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["alpha", "mean_one_minus_cos2", "stderr"]);
        for r in &self.rows {
            csv.row(&[fmt_f64(r.alpha), fmt_f64(r.mean_one_minus_cos2), fmt_f64(r.stderr)]);
        }
        csv.footer(&format!("slope={}", fmt_f64(self.slope)));
        csv.finish()
    }
}

/// Averages `1 - cos^2(theta_h)`, `h = floor(alpha T)`, over one perturbed-identity
/// chain per seed and fits the log-log slope against `1 - alpha`.
pub fn scaling_experiment(
    n: usize,
    depth: usize,
    c: f64,
    seeds: &[u64],
    alphas: &[f64],
) -> Result<ScalingReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("scaling experiment needs at least one seed"));
    }
    if alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::invalid("alphas must lie in (0, 1]"));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("alphas must be strictly increasing"));
    }
    let horizons: Vec<usize> = alphas
        .iter()
        .map(|a| ((a * depth as f64).floor() as usize).max(1))
        .collect();

    // one worker per seed; results are gathered back in seed order
    let per_seed: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let horizons = &horizons;
                scope.spawn(move || -> Result<Vec<f64>> {
                    let mut rng = SeededRng::new(seed);
                    let chain = LinearChain::perturbed_identity(n, depth, c, &mut rng)?;
                    horizons
                        .iter()
                        .map(|&h| closed_form_cosine(&chain, h).map(|cos| (1.0 - cos * cos).max(0.0)))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scaling worker panicked"))
            .collect()
    });
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;

    let k = seeds.len() as f64;
    let rows: Vec<ScalingRow> = alphas
        .iter()
        .zip(&horizons)
        .enumerate()
        .map(|(i, (&alpha, &horizon))| {
            let vals: Vec<f64> = per_seed.iter().map(|v| v[i]).collect();
            let mean = vals.iter().sum::<f64>() / k;
            let stderr = if vals.len() > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                0.0
            };
            ScalingRow {
                alpha,
                horizon,
                mean_one_minus_cos2: mean,
                stderr,
            }
        })
        .collect();

    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.alpha < 1.0 && r.mean_one_minus_cos2 > 0.0)
        .map(|r| ((1.0 - r.alpha).ln(), r.mean_one_minus_cos2.ln()))
        .unzip();
    let slope = if xs.len() >= 2 {
        polyfit(&xs, &ys, 1)?.coefficients()[1]
    } else {
        f64::NAN
    };

    Ok(ScalingReport {
        rows,
        slope,
        seeds: seeds.to_vec(),
        dim: n,
        depth,
        perturbation_bound: c,
    })
}

/// Log-log slope of `ys` against `1 - alphas`; used on planted surfaces.
pub fn log_log_slope(alphas: &[f64], ys: &[f64]) -> Result<f64> {
    let xs: Vec<f64> = alphas.iter().map(|a| (1.0 - a).ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    Ok(polyfit(&xs, &ly, 1)?.coefficients()[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `sigma_min(W_b^g) >= (1 - c/T)^(g-b)`
    SigmaMinLower,
    /// `|W_b^g|_2 <= (1 + c/T)^(g-b)`
    NormUpper,
    /// `|I - W_{aT}^T|_2 <= e^{(1-a)c} - 1` with `a = floor(alpha T) / T`
    TailDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub kind: BoundKind,
    pub t1: usize,
    pub t2: usize,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub checks: usize,
    pub violations: Vec<BoundViolation>,
    /// Largest `value / bound` seen for upper bounds and `bound / value` for the lower bound.
    pub worst_ratio: f64,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative slack for bound comparisons; covers power-iteration and rounding error.
const BOUND_SLACK: f64 = 1e-9;

/// Samples `(beta, gamma)` and `alpha` ranges and checks the product-norm bounds.
pub fn lemma_bounds_check(chain: &LinearChain, samples: usize, rng: &mut SeededRng) -> Result<LemmaReport> {
    let depth = chain.depth();
    let c = chain.perturbation_bound();
    let step = c / depth as f64;
    let mut report = LemmaReport {
        checks: 0,
        violations: Vec::new(),
        worst_ratio: 0.0,
    };
    let eye = Matrix::identity(chain.dim());

    for _ in 0..samples {
        let mut beta = rng.uniform(0.0, 1.0);
        let mut gamma = rng.uniform(0.0, 1.0);
        if beta > gamma {
            std::mem::swap(&mut beta, &mut gamma);
        }
        let t1 = (beta * depth as f64).floor() as usize;
        let t2 = (gamma * depth as f64).floor() as usize;
        let k = (t2 - t1) as i32;
        let prod = partial_product(chain, t1, t2)?;

        let smin = min_singular_value(&prod)?;
        let lower = (1.0 - step).powi(k);
        report.checks += 1;
        report.worst_ratio = report.worst_ratio.max(lower / smin);
        if smin < lower * (1.0 - BOUND_SLACK) {
            report.violations.push(BoundViolation {
                kind: BoundKind::SigmaMinLower,
                t1,
                t2,
                value: smin,
                bound: lower,
            });
        }

        let norm = spectral_norm(&prod);
        let upper = (1.0 + step).powi(k);
        report.checks += 1;
        report.worst_ratio = report.worst_ratio.max(norm / upper);
        if norm > upper * (1.0 + BOUND_SLACK) {
            report.violations.push(BoundViolation {
                kind: BoundKind::NormUpper,
                t1,
                t2,
                value: norm,
                bound: upper,
            });
        }

        let alpha = rng.uniform(0.0, 1.0);
        let ta = (alpha * depth as f64).floor() as usize;
        let tail = eye.sub(&partial_product(chain, ta, depth)?)?;
        let dev = spectral_norm(&tail);
        let remaining = (depth - ta) as f64 / depth as f64;
        let bound = (remaining * c).exp() - 1.0;
        report.checks += 1;
        if bound > 0.0 {
            report.worst_ratio = report.worst_ratio.max(dev / bound);
        }
        if dev > bound * (1.0 + BOUND_SLACK) + 1e-14 {
            report.violations.push(BoundViolation {
                kind: BoundKind::TailDeviation,
                t1: ta,
                t2: depth,
                value: dev,
                bound,
            });
        }
    }
    Ok(report)
}
