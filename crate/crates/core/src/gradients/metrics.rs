use super::HorizonGradient;
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, dot, norm2};

fn check_pair(gh: &HorizonGradient, gt: &HorizonGradient) -> Result<()> {
    if gt.horizon != gt.depth() {
        return Err(Error::invalid(format!(
            "reference gradient must use the full horizon {} (got {})",
            gt.depth(),
            gt.horizon
        )));
    }
    if gh.depth() != gt.depth() {
        return Err(Error::dims(gt.depth(), gh.depth(), "gradient block count"));
    }
    for (t, (a, b)) in gh.per_block.iter().zip(&gt.per_block).enumerate() {
        if a.len() != b.len() {
            return Err(Error::InvalidInput(format!(
                "block {t}: {} vs {} parameters",
                a.len(),
                b.len()
            )));
        }
    }
    Ok(())
}

/// `cos(theta_h)` between the concatenated `g_h` and the full-horizon `g_T`.
pub fn gradient_angle(gh: &HorizonGradient, gt: &HorizonGradient) -> Result<f64> {
    check_pair(gh, gt)?;
    cosine_similarity(&gh.concatenated(), &gt.concatenated())
}

/// `min_c |c g_h - g_T|`, evaluated directly at the optimal `c = <g_h, g_T> / |g_h|^2`.
///
/// Equals `sin(theta_h) |g_T|`.
pub fn rescaled_deviation(gh: &HorizonGradient, gt: &HorizonGradient) -> Result<f64> {
    check_pair(gh, gt)?;
    let a = gh.concatenated();
    let b = gt.concatenated();
    let aa = dot(&a, &a);
    if aa == 0.0 || norm2(&b) == 0.0 {
        return Err(Error::Degenerate("zero gradient in rescaled deviation".into()));
    }
    let c = dot(&a, &b) / aa;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (c * x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hg(h: usize, blocks: Vec<Vec<f64>>) -> HorizonGradient {
        HorizonGradient {
            horizon: h,
            per_block: blocks,
            batch_id: String::new(),
        }
    }

    #[test]
    fn angle_of_identical_is_one() {
        let g = hg(2, vec![vec![1.0, 2.0], vec![-3.0]]);
        assert!((gradient_angle(&g, &g).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reference_must_be_full_horizon() {
        let gh = hg(1, vec![vec![1.0], vec![1.0]]);
        assert!(gradient_angle(&gh, &gh).is_err());
    }

    #[test]
    fn deviation_examples() {
        let gt = hg(1, vec![vec![1.0, 1.0]]);
        let par = hg(1, vec![vec![2.0, 2.0]]);
        assert!(rescaled_deviation(&par, &gt).unwrap().abs() < 1e-15);
        let orth = hg(1, vec![vec![1.0, -1.0]]);
        assert!((rescaled_deviation(&orth, &gt).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let e1 = hg(1, vec![vec![1.0, 0.0]]);
        assert!((rescaled_deviation(&e1, &gt).unwrap() - 1.0).abs() < 1e-15);
        let zero = hg(1, vec![vec![0.0, 0.0]]);
        assert!(matches!(rescaled_deviation(&zero, &gt), Err(Error::Degenerate(_))));
        assert!(matches!(gradient_angle(&zero, &gt), Err(Error::Degenerate(_))));
    }

    #[test]
    fn deviation_is_sine_times_norm() {
        let gt = hg(2, vec![vec![0.3, -1.2], vec![2.0, 0.7, 0.1]]);
        let gh = hg(2, vec![vec![1.3, 0.2], vec![-0.4, 0.9, 1.1]]);
        let c = gradient_angle(&gh, &gt).unwrap();
        let dev = rescaled_deviation(&gh, &gt).unwrap();
        assert!((dev - (1.0 - c * c).sqrt() * gt.norm()).abs() < 1e-10);
    }
}
