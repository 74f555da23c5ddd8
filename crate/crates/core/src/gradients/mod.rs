//! The horizon gradient family.
//!
//! For block `t` and horizon `h`, `g_h(u(t)) = d L(x(min(t + h, T))) / d u(t)`.
//! The `-L(x(t))` part of the truncated loss does not depend on `u(t)` and is
//! never evaluated. `h = 1` gives the local (forward-forward style) gradient and
//! `h = T` gives back-propagation.
//!
//! All per-block gradients of one call come from a single shared forward
//! trajectory. Blocks whose window reaches the output share one reverse sweep
//! from `x(T)`, so their gradients are bitwise identical to the `h = T` ones.

mod memory;
mod metrics;

pub use memory::{memory_estimate, memory_estimate_grouped, MemoryEstimate, MemoryMode, MemoryModel};
pub use metrics::{gradient_angle, rescaled_deviation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward, state_loss, state_loss_grad, Activations, Batch, Network};

/// Per-block parameter gradients for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonGradient {
    pub horizon: usize,
    pub per_block: Vec<Vec<f64>>,
    pub batch_id: String,
}

impl HorizonGradient {
    pub fn depth(&self) -> usize {
        self.per_block.len()
    }

    pub fn concatenated(&self) -> Vec<f64> {
        self.per_block.iter().flatten().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.per_block
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn with_batch_id(mut self, id: impl Into<String>) -> Self {
        self.batch_id = id.into();
        self
    }
}

/// Partition of the blocks `0..T` into consecutive stages, given by stage starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGrouping {
    starts: Vec<usize>,
    depth: usize,
}

impl BlockGrouping {
    pub fn new(starts: Vec<usize>, depth: usize) -> Result<Self> {
        if starts.first() != Some(&0) {
            return Err(Error::invalid("grouping must start at block 0"));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grouping boundaries must be strictly increasing"));
        }
        if *starts.last().expect("non-empty") >= depth {
            return Err(Error::invalid("grouping boundary beyond the last block"));
        }
        Ok(Self { starts, depth })
    }

    /// `stages` contiguous stages of (nearly) equal size; earlier stages take the remainder.
    pub fn even(depth: usize, stages: usize) -> Result<Self> {
        if stages == 0 || stages > depth {
            return Err(Error::invalid(format!("cannot split {depth} blocks into {stages} stages")));
        }
        let base = depth / stages;
        let extra = depth % stages;
        let mut starts = Vec::with_capacity(stages);
        let mut at = 0;
        for s in 0..stages {
            starts.push(at);
            at += base + usize::from(s < extra);
        }
        Self::new(starts, depth)
    }

    pub fn stage_count(&self) -> usize {
        self.starts.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// State index at the start of stage `s`; `stage_state(S) == T`.
    pub fn stage_state(&self, s: usize) -> usize {
        if s >= self.starts.len() {
            self.depth
        } else {
            self.starts[s]
        }
    }

    pub fn stage_blocks(&self, s: usize) -> std::ops::Range<usize> {
        self.stage_state(s)..self.stage_state(s + 1)
    }
}

/// Reverse sweep from the loss at state `end` down to block `stop`.
///
/// Returns `d L(x(end)) / d u(t)` for every `t in stop..end` with `want(t)`.
fn reverse_sweep(
    net: &Network,
    acts: &Activations,
    y: &Batch,
    end: usize,
    stop: usize,
    want: impl Fn(usize) -> bool,
) -> Result<Vec<(usize, Vec<f64>)>> {
    debug_assert!(stop < end && end <= net.depth());
    let mut upstream = state_loss_grad(acts.state(end), y)?;
    let mut out = Vec::new();
    for t in (stop..end).rev() {
        let need_x = t > stop;
        let need_u = want(t);
        let (gx, gu) = net
            .block(t)
            .vjp_with(acts.state(t), acts.pre(t), &upstream, need_x, need_u)?;
        if let Some(g) = gu {
            out.push((t, g));
        }
        if let Some(g) = gx {
            upstream = g;
        }
    }
    Ok(out)
}

fn check_batch(net: &Network, x0: &Batch, y: &Batch) -> Result<()> {
    if x0.rows() != y.rows() {
        return Err(Error::dims(x0.rows(), y.rows(), "inputs vs labels batch size"));
    }
    net.check_labels(y)
}

/// `g_h` for every block from one forward pass.
pub fn horizon_gradient(net: &Network, x0: &Batch, y: &Batch, h: usize) -> Result<HorizonGradient> {
    check_batch(net, x0, y)?;
    let acts = forward(net, x0)?;
    horizon_gradient_from(net, &acts, y, h)
}

/// `g_h` from an already recorded trajectory.
pub fn horizon_gradient_from(
    net: &Network,
    acts: &Activations,
    y: &Batch,
    h: usize,
) -> Result<HorizonGradient> {
    let depth = net.depth();
    if h == 0 || h > depth {
        return Err(Error::OutOfRange {
            index: h,
            lo: 1,
            hi: depth,
            context: "horizon",
        });
    }
    let mut per_block = vec![Vec::new(); depth];
    for t in 0..depth - h {
        for (b, g) in reverse_sweep(net, acts, y, t + h, t, |b| b == t)? {
            per_block[b] = g;
        }
    }
    for (b, g) in reverse_sweep(net, acts, y, depth, depth - h, |_| true)? {
        per_block[b] = g;
    }
    Ok(HorizonGradient {
        horizon: h,
        per_block,
        batch_id: String::new(),
    })
}

/// Local gradient `d L(x(t+1)) / d u(t)` of a single block.
pub fn local_gradient(net: &Network, acts: &Activations, y: &Batch, t: usize) -> Result<Vec<f64>> {
    if t >= net.depth() {
        return Err(Error::OutOfRange {
            index: t,
            lo: 0,
            hi: net.depth() - 1,
            context: "local_gradient block",
        });
    }
    let mut g = reverse_sweep(net, acts, y, t + 1, t, |_| true)?;
    Ok(g.pop().expect("one block").1)
}

/// Horizon gradient where the horizon counts stages of `grouping` instead of blocks.
pub fn grouped_horizon_gradient(
    net: &Network,
    grouping: &BlockGrouping,
    x0: &Batch,
    y: &Batch,
    h: usize,
) -> Result<HorizonGradient> {
    check_grouping(net, grouping)?;
    check_batch(net, x0, y)?;
    let stages = grouping.stage_count();
    if h == 0 || h > stages {
        return Err(Error::OutOfRange {
            index: h,
            lo: 1,
            hi: stages,
            context: "stage horizon",
        });
    }
    let acts = forward(net, x0)?;
    let mut per_block = vec![Vec::new(); net.depth()];
    for s in 0..stages - h {
        let blocks = grouping.stage_blocks(s);
        let end = grouping.stage_state(s + h);
        for (b, g) in reverse_sweep(net, &acts, y, end, blocks.start, |b| blocks.contains(&b))? {
            per_block[b] = g;
        }
    }
    let stop = grouping.stage_state(stages - h);
    for (b, g) in reverse_sweep(net, &acts, y, net.depth(), stop, |_| true)? {
        per_block[b] = g;
    }
    Ok(HorizonGradient {
        horizon: h,
        per_block,
        batch_id: String::new(),
    })
}

fn check_grouping(net: &Network, grouping: &BlockGrouping) -> Result<()> {
    if grouping.depth() != net.depth() {
        return Err(Error::dims(net.depth(), grouping.depth(), "grouping depth"));
    }
    Ok(())
}

/// LoCo-style gradient: stage `s` receives `dL(x^(s+1)) + dL(x^(s+2))` where the
/// second term exists; the final stage only sees the terminal loss.
///
/// The underlying per-stage losses do not telescope to the terminal loss.
pub fn loco_gradient(
    net: &Network,
    grouping: &BlockGrouping,
    x0: &Batch,
    y: &Batch,
) -> Result<HorizonGradient> {
    check_grouping(net, grouping)?;
    check_batch(net, x0, y)?;
    let acts = forward(net, x0)?;
    let stages = grouping.stage_count();
    let mut per_block = vec![Vec::new(); net.depth()];
    for s in 0..stages {
        let blocks = grouping.stage_blocks(s);
        let near = grouping.stage_state(s + 1);
        for (b, g) in reverse_sweep(net, &acts, y, near, blocks.start, |b| blocks.contains(&b))? {
            per_block[b] = g;
        }
        if s + 2 <= stages {
            let far = grouping.stage_state(s + 2);
            for (b, g) in reverse_sweep(net, &acts, y, far, blocks.start, |b| blocks.contains(&b))? {
                for (acc, v) in per_block[b].iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }
    Ok(HorizonGradient {
        horizon: 2,
        per_block,
        batch_id: String::new(),
    })
}

/// Central differences of `L(x(state))` with respect to `u(t)`.
pub fn finite_diff_state_gradient(
    net: &Network,
    x0: &Batch,
    y: &Batch,
    t: usize,
    state: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if t >= net.depth() || state > net.depth() {
        return Err(Error::OutOfRange {
            index: t,
            lo: 0,
            hi: net.depth() - 1,
            context: "finite_diff block",
        });
    }
    let loss_at = |n: &Network| -> Result<f64> {
        let acts = forward(n, x0)?;
        state_loss(acts.state(state), y)
    };
    let mut probe = net.clone();
    let count = net.block(t).param_count();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let orig = probe.block(t).params()[i];
        probe.block_mut(t).params_mut()[i] = orig + eps;
        let plus = loss_at(&probe)?;
        probe.block_mut(t).params_mut()[i] = orig - eps;
        let minus = loss_at(&probe)?;
        probe.block_mut(t).params_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Central differences of the terminal loss `L(x(T))` with respect to `u(t)`.
pub fn finite_diff_gradient(net: &Network, x0: &Batch, y: &Batch, t: usize, eps: f64) -> Result<Vec<f64>> {
    finite_diff_state_gradient(net, x0, y, t, net.depth(), eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Block;
    use crate::numerics::{gaussian_matrix, Matrix, SeededRng};

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    fn random_problem(seed: u64, depth: usize) -> (Network, Batch, Batch) {
        let mut rng = SeededRng::new(seed);
        let net = Network::res_mlp(5, 5, 5, depth, 0.4, &mut rng).unwrap();
        let x0 = gaussian_matrix(3, 5, 1.0, &mut rng).unwrap();
        let y = gaussian_matrix(3, 5, 1.0, &mut rng).unwrap();
        (net, x0, y)
    }

    #[test]
    fn horizon_out_of_range() {
        let (net, x0, y) = random_problem(1, 4);
        assert!(horizon_gradient(&net, &x0, &y, 0).is_err());
        assert!(horizon_gradient(&net, &x0, &y, 5).is_err());
    }

    #[test]
    fn h1_is_local_gradient() {
        let (net, x0, y) = random_problem(2, 6);
        let g1 = horizon_gradient(&net, &x0, &y, 1).unwrap();
        let acts = forward(&net, &x0).unwrap();
        for t in 0..net.depth() {
            let local = local_gradient(&net, &acts, &y, t).unwrap();
            assert_eq!(g1.per_block[t], local);
        }
    }

    #[test]
    fn full_horizon_matches_finite_differences() {
        let (net, x0, y) = random_problem(3, 5);
        assert!(crate::network::min_relu_margin(&net, &x0).unwrap().unwrap() > 1e-3);
        let g = horizon_gradient(&net, &x0, &y, 5).unwrap();
        for t in 0..5 {
            let fd = finite_diff_gradient(&net, &x0, &y, t, 1e-5).unwrap();
            assert!(rel_err(&g.per_block[t], &fd) < 1e-6, "block {t}");
        }
    }

    #[test]
    fn intermediate_horizon_matches_finite_differences() {
        let (net, x0, y) = random_problem(4, 6);
        let h = 3;
        let g = horizon_gradient(&net, &x0, &y, h).unwrap();
        for t in 0..6 {
            let fd = finite_diff_state_gradient(&net, &x0, &y, t, (t + h).min(6), 1e-5).unwrap();
            assert!(rel_err(&g.per_block[t], &fd) < 1e-6, "block {t}");
        }
    }

    #[test]
    fn window_nesting_is_exact() {
        let (net, x0, y) = random_problem(5, 7);
        let gt = horizon_gradient(&net, &x0, &y, 7).unwrap();
        for h in 1..=7 {
            let gh = horizon_gradient(&net, &x0, &y, h).unwrap();
            for t in 7 - h..7 {
                assert_eq!(gh.per_block[t], gt.per_block[t], "h={h} t={t}");
            }
        }
    }

    #[test]
    fn identity_linear_chain_closed_form() {
        // W(t) = I: every g_h(u(t)) = (I - Phi) for the whitened basis problem.
        let n = 3;
        let depth = 4;
        let mut rng = SeededRng::new(6);
        let phi = gaussian_matrix(n, n, 1.0, &mut rng).unwrap();
        let net = Network::linear_chain(&vec![Matrix::identity(n); depth]).unwrap();
        let scale = (n as f64).sqrt();
        let x0 = Matrix::identity(n).scale(scale);
        let y = x0.matmul_nt(&phi).unwrap();
        let expect = Matrix::identity(n).sub(&phi).unwrap();
        for h in 1..=depth {
            let g = horizon_gradient(&net, &x0, &y, h).unwrap();
            for t in 0..depth {
                let got = Matrix::new(n, n, g.per_block[t].clone()).unwrap();
                assert!(got.max_abs_diff(&expect) < 1e-12, "h={h} t={t}");
            }
        }
    }

    #[test]
    fn grouping_validation() {
        assert!(BlockGrouping::new(vec![], 4).is_err());
        assert!(BlockGrouping::new(vec![1, 2], 4).is_err());
        assert!(BlockGrouping::new(vec![0, 2, 2], 4).is_err());
        assert!(BlockGrouping::new(vec![0, 4], 4).is_err());
        let g = BlockGrouping::even(15, 5).unwrap();
        assert_eq!(g.starts(), &[0, 3, 6, 9, 12]);
        assert_eq!(BlockGrouping::even(7, 3).unwrap().starts(), &[0, 3, 5]);
        assert!(BlockGrouping::even(3, 4).is_err());
    }

    #[test]
    fn single_stage_loco_is_bp() {
        let (net, x0, y) = random_problem(7, 5);
        let grouping = BlockGrouping::new(vec![0], 5).unwrap();
        let loco = loco_gradient(&net, &grouping, &x0, &y).unwrap();
        let bp = horizon_gradient(&net, &x0, &y, 5).unwrap();
        assert_eq!(loco.per_block, bp.per_block);
    }

    #[test]
    fn loco_zero_when_already_fit() {
        let blocks = vec![Block::linear_residual(&Matrix::zeros(2, 2)).unwrap(); 4];
        let net = Network::new(blocks).unwrap();
        let x0 = Matrix::new(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let grouping = BlockGrouping::even(4, 2).unwrap();
        let g = loco_gradient(&net, &grouping, &x0, &x0).unwrap();
        assert!(g.concatenated().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loco_middle_stage_is_sum_of_stage_horizons() {
        let mut rng = SeededRng::new(8);
        let weights: Vec<Matrix> = (0..6)
            .map(|_| {
                let w = gaussian_matrix(3, 3, 0.3, &mut rng).unwrap();
                Matrix::identity(3).add(&w).unwrap()
            })
            .collect();
        let net = Network::linear_chain(&weights).unwrap();
        let x0 = gaussian_matrix(4, 3, 1.0, &mut rng).unwrap();
        let y = gaussian_matrix(4, 3, 1.0, &mut rng).unwrap();
        let grouping = BlockGrouping::even(6, 3).unwrap();
        let loco = loco_gradient(&net, &grouping, &x0, &y).unwrap();
        let g1 = grouped_horizon_gradient(&net, &grouping, &x0, &y, 1).unwrap();
        let g2 = grouped_horizon_gradient(&net, &grouping, &x0, &y, 2).unwrap();
        for b in grouping.stage_blocks(1) {
            for i in 0..loco.per_block[b].len() {
                let sum = g1.per_block[b][i] + g2.per_block[b][i];
                assert!((loco.per_block[b][i] - sum).abs() <= 1e-12);
            }
        }
        // final stage: terminal loss only
        for b in grouping.stage_blocks(2) {
            assert_eq!(loco.per_block[b], g1.per_block[b]);
        }
    }

    #[test]
    fn finite_diff_scalar_case() {
        let w = 0.7;
        let net = Network::linear_chain(&[Matrix::new(1, 1, vec![w]).unwrap()]).unwrap();
        let x0 = Matrix::new(1, 1, vec![1.0]).unwrap();
        let y = Matrix::new(1, 1, vec![0.0]).unwrap();
        let fd = finite_diff_gradient(&net, &x0, &y, 0, 1e-4).unwrap();
        assert!((fd[0] - w).abs() < 1e-10);
        assert!(finite_diff_gradient(&net, &x0, &y, 0, 0.0).is_err());
    }

    #[test]
    fn central_differences_exact_on_quadratic_loss() {
        // For a linear network the loss is exactly quadratic in one block's
        // parameters, so central differences carry no truncation error at any step.
        let mut rng = SeededRng::new(9);
        let net = Network::res_linear(3, 3, 0.5, &mut rng).unwrap();
        let x0 = gaussian_matrix(2, 3, 1.0, &mut rng).unwrap();
        let y = gaussian_matrix(2, 3, 1.0, &mut rng).unwrap();
        let exact = horizon_gradient(&net, &x0, &y, 3).unwrap();
        for t in 0..3 {
            for eps in [0.1, 0.05, 1e-3] {
                let fd = finite_diff_gradient(&net, &x0, &y, t, eps).unwrap();
                assert!(rel_err(&fd, &exact.per_block[t]) < 1e-9, "t={t} eps={eps}");
            }
        }
    }
}
