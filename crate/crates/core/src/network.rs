//! Block-structured feed-forward model `x(t+1) = f_t(x(t), u(t))`.
//!
//! Batches are `batch x dim` matrices. Every loss is the batch mean of
//! `0.5 * |P x - y|^2`, where `P` keeps the leading `dim(y)` coordinates of the
//! state (the identity when widths match). VJPs expect an upstream that is
//! already the gradient of that batch-mean loss, so parameter gradients are
//! plain sums over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

pub type Batch = Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// `W x (+ b)`
    LinearDense,
    /// `x + W x`
    LinearResidual,
    /// `x + relu(W x + b)`
    MlpResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
}

/// One dynamic step with vectorized parameters: weights (`output_dim x input_dim`,
/// row-major) followed by the bias when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockDoc", into = "BlockDoc")]
pub struct Block {
    kind: BlockKind,
    input_dim: usize,
    output_dim: usize,
    bias: bool,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    kind: BlockKind,
    input_dim: usize,
    output_dim: usize,
    bias: bool,
    params: Vec<f64>,
}

impl TryFrom<BlockDoc> for Block {
    type Error = Error;
    fn try_from(d: BlockDoc) -> Result<Self> {
        Block::new(d.kind, d.input_dim, d.output_dim, d.bias, d.params)
    }
}

impl From<Block> for BlockDoc {
    fn from(b: Block) -> Self {
        BlockDoc {
            kind: b.kind,
            input_dim: b.input_dim,
            output_dim: b.output_dim,
            bias: b.bias,
            params: b.params,
        }
    }
}

impl Block {
    pub fn new(
        kind: BlockKind,
        input_dim: usize,
        output_dim: usize,
        bias: bool,
        params: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::invalid("block dimensions must be positive"));
        }
        match kind {
            BlockKind::LinearDense => {}
            BlockKind::LinearResidual | BlockKind::MlpResidual if input_dim != output_dim => {
                return Err(Error::dims(input_dim, output_dim, "residual block dims"));
            }
            BlockKind::LinearResidual if bias => {
                return Err(Error::invalid("linear-residual blocks carry no bias"));
            }
            BlockKind::MlpResidual if !bias => {
                return Err(Error::invalid("mlp-residual blocks require a bias"));
            }
            _ => {}
        }
        let expected = Self::param_count_for(input_dim, output_dim, bias);
        if params.len() != expected {
            return Err(Error::dims(expected, params.len(), "block parameter count"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite block parameter"));
        }
        Ok(Self {
            kind,
            input_dim,
            output_dim,
            bias,
            params,
        })
    }

    pub fn linear_dense(weights: &Matrix, bias: Option<&[f64]>) -> Result<Self> {
        let mut params = weights.as_slice().to_vec();
        if let Some(b) = bias {
            params.extend_from_slice(b);
        }
        Self::new(
            BlockKind::LinearDense,
            weights.cols(),
            weights.rows(),
            bias.is_some(),
            params,
        )
    }

    pub fn linear_residual(weights: &Matrix) -> Result<Self> {
        Self::new(
            BlockKind::LinearResidual,
            weights.cols(),
            weights.rows(),
            false,
            weights.as_slice().to_vec(),
        )
    }

    pub fn mlp_residual(weights: &Matrix, bias: &[f64]) -> Result<Self> {
        let mut params = weights.as_slice().to_vec();
        params.extend_from_slice(bias);
        Self::new(
            BlockKind::MlpResidual,
            weights.cols(),
            weights.rows(),
            true,
            params,
        )
    }

    fn param_count_for(input_dim: usize, output_dim: usize, bias: bool) -> usize {
        input_dim * output_dim + if bias { output_dim } else { 0 }
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn has_bias(&self) -> bool {
        self.bias
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn weights(&self) -> Matrix {
        let n = self.input_dim * self.output_dim;
        Matrix::new(self.output_dim, self.input_dim, self.params[..n].to_vec())
            .expect("block invariant")
    }

    fn weight_slice(&self) -> &[f64] {
        &self.params[..self.input_dim * self.output_dim]
    }

    fn bias_slice(&self) -> Option<&[f64]> {
        self.bias
            .then(|| &self.params[self.input_dim * self.output_dim..])
    }

    /// `params -= lr * grad`.
    pub fn apply_update(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::dims(self.params.len(), grad.len(), "parameter update"));
        }
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `x W^T + b`, the affine part shared by every kind.
    fn affine(&self, x: &Batch) -> Matrix {
        let w = self.weight_slice();
        let (n_in, n_out) = (self.input_dim, self.output_dim);
        let mut z = Matrix::zeros(x.rows(), n_out);
        for b in 0..x.rows() {
            let xr = x.row(b);
            let zr = z.row_mut(b);
            for (o, zo) in zr.iter_mut().enumerate() {
                let wr = &w[o * n_in..(o + 1) * n_in];
                *zo = wr.iter().zip(xr).map(|(a, c)| a * c).sum();
            }
        }
        if let Some(bias) = self.bias_slice() {
            for b in 0..x.rows() {
                for (zo, bo) in z.row_mut(b).iter_mut().zip(bias) {
                    *zo += bo;
                }
            }
        }
        z
    }

    fn check_input(&self, x: &Batch) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::dims(self.input_dim, x.cols(), "block input"));
        }
        Ok(())
    }

    /// Forward step; also returns the pre-activation for mlp-residual blocks.
    fn apply_recording(&self, x: &Batch) -> Result<(Batch, Option<Matrix>)> {
        self.check_input(x)?;
        let z = self.affine(x);
        Ok(match self.kind {
            BlockKind::LinearDense => (z, None),
            BlockKind::LinearResidual => (x.add(&z)?, None),
            BlockKind::MlpResidual => {
                let mut out = x.clone();
                for (o, zv) in out.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *o += zv.max(0.0);
                }
                (out, Some(z))
            }
        })
    }

    /// Reverse-mode step. `pre` is the cached pre-activation (mlp-residual only).
    pub(crate) fn vjp_with(
        &self,
        x: &Batch,
        pre: Option<&Matrix>,
        upstream: &Batch,
        need_x: bool,
        need_u: bool,
    ) -> Result<(Option<Batch>, Option<Vec<f64>>)> {
        self.check_input(x)?;
        if upstream.cols() != self.output_dim || upstream.rows() != x.rows() {
            return Err(Error::dims(self.output_dim, upstream.cols(), "block upstream"));
        }
        // Gradient flowing into the affine part.
        let delta = match self.kind {
            BlockKind::MlpResidual => {
                let z_owned;
                let z = match pre {
                    Some(z) => z,
                    None => {
                        z_owned = self.affine(x);
                        &z_owned
                    }
                };
                let mut d = upstream.clone();
                for (dv, zv) in d.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    // relu'(0) := 0
                    if *zv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                d
            }
            _ => upstream.clone(),
        };

        let grad_x = if need_x {
            let w = self.weights();
            let through = delta.matmul(&w)?;
            Some(match self.kind {
                BlockKind::LinearDense => through,
                BlockKind::LinearResidual | BlockKind::MlpResidual => upstream.add(&through)?,
            })
        } else {
            None
        };

        let grad_u = if need_u {
            let gw = delta.matmul_tn(x)?;
            let mut g = gw.into_vec();
            if self.bias {
                let mut gb = vec![0.0; self.output_dim];
                for b in 0..delta.rows() {
                    for (acc, d) in gb.iter_mut().zip(delta.row(b)) {
                        *acc += d;
                    }
                }
                g.extend(gb);
            }
            Some(g)
        } else {
            None
        };
        Ok((grad_x, grad_u))
    }
}

pub fn block_apply(block: &Block, x: &Batch) -> Result<Batch> {
    Ok(block.apply_recording(x)?.0)
}

/// `((df/dx)^T upstream, (df/du)^T upstream)`, summed over the batch.
pub fn block_vjp(block: &Block, x: &Batch, upstream: &Batch) -> Result<(Batch, Vec<f64>)> {
    let (gx, gu) = block.vjp_with(x, None, upstream, true, true)?;
    Ok((gx.expect("requested"), gu.expect("requested")))
}

/// Recorded trajectory `x(0..=T)` of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    states: Vec<Batch>,
    pre: Vec<Option<Matrix>>,
}

impl Activations {
    pub fn states(&self) -> &[Batch] {
        &self.states
    }
    pub fn state(&self, t: usize) -> &Batch {
        &self.states[t]
    }
    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn output(&self) -> &Batch {
        self.states.last().expect("at least x(0)")
    }
    pub(crate) fn pre(&self, t: usize) -> Option<&Matrix> {
        self.pre[t].as_ref()
    }
    pub fn batch_size(&self) -> usize {
        self.states[0].rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct Network {
    blocks: Vec<Block>,
    loss_kind: LossKind,
}


pub const NETWORK_FORMAT: &str = "mpchorizon-network";
pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    format: String,
    version: u32,
    loss: LossKind,
    blocks: Vec<Block>,
}

impl TryFrom<NetworkDoc> for Network {
    type Error = Error;
    fn try_from(d: NetworkDoc) -> Result<Self> {
        if d.format != NETWORK_FORMAT {
            return Err(Error::Serialization(format!("unexpected format tag {:?}", d.format)));
        }
        if d.version != NETWORK_FORMAT_VERSION {
            return Err(Error::Serialization(format!("unsupported network version {}", d.version)));
        }
        Network::with_loss(d.blocks, d.loss)
    }
}

impl From<Network> for NetworkDoc {
    fn from(n: Network) -> Self {
        NetworkDoc {
            format: NETWORK_FORMAT.into(),
            version: NETWORK_FORMAT_VERSION,
            loss: n.loss_kind,
            blocks: n.blocks,
        }
    }
}

impl Network {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        Self::with_loss(blocks, LossKind::Mse)
    }

    pub fn with_loss(blocks: Vec<Block>, loss_kind: LossKind) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::invalid("network needs at least one block"));
        }
        for (t, pair) in blocks.windows(2).enumerate() {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::InvalidInput(format!(
                    "block {t} outputs {} but block {} expects {}",
                    pair[0].output_dim,
                    t + 1,
                    pair[1].input_dim
                )));
            }
        }
        Ok(Self { blocks, loss_kind })
    }

    /// Number of blocks `T`.
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }
    pub fn block(&self, t: usize) -> &Block {
        &self.blocks[t]
    }
    pub fn block_mut(&mut self, t: usize) -> &mut Block {
        &mut self.blocks[t]
    }
    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }
    pub fn input_dim(&self) -> usize {
        self.blocks[0].input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.blocks[self.blocks.len() - 1].output_dim
    }
    /// Dimension `n_t` of state `t` for `t in 0..=T`.
    pub fn state_dim(&self, t: usize) -> usize {
        if t == 0 {
            self.input_dim()
        } else {
            self.blocks[t - 1].output_dim
        }
    }
    pub fn param_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(Block::param_count).collect()
    }
    pub fn param_count(&self) -> usize {
        self.param_counts().iter().sum()
    }

    /// Every state must be at least as wide as the label for the per-state losses.
    pub fn check_labels(&self, y: &Batch) -> Result<()> {
        let k = y.cols();
        for t in 0..=self.depth() {
            if self.state_dim(t) < k {
                return Err(Error::dims(k, self.state_dim(t), "state narrower than label"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Residual MLP: a dense input block, `depth - 2` mlp-residual blocks and
    /// a dense output head, all with bias.
    pub fn res_mlp(
        input_dim: usize,
        width: usize,
        output_dim: usize,
        depth: usize,
        weight_std: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if depth < 2 {
            return Err(Error::invalid("res_mlp needs depth >= 2"));
        }
        let mut blocks = Vec::with_capacity(depth);
        blocks.push(Block::linear_dense(
            &gaussian(width, input_dim, weight_std, rng)?,
            Some(&vec![0.0; width]),
        )?);
        for _ in 0..depth - 2 {
            blocks.push(Block::mlp_residual(
                &gaussian(width, width, weight_std, rng)?,
                &vec![0.0; width],
            )?);
        }
        blocks.push(Block::linear_dense(
            &gaussian(output_dim, width, weight_std, rng)?,
            Some(&vec![0.0; output_dim]),
        )?);
        Self::new(blocks)
    }

    /// Residual linear network: dense first/last blocks without bias and
    /// linear-residual blocks in between.
    pub fn res_linear(
        width: usize,
        depth: usize,
        weight_std: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if depth < 2 {
            return Err(Error::invalid("res_linear needs depth >= 2"));
        }
        let mut blocks = Vec::with_capacity(depth);
        blocks.push(Block::linear_dense(&gaussian(width, width, weight_std, rng)?, None)?);
        for _ in 0..depth - 2 {
            blocks.push(Block::linear_residual(&gaussian(width, width, weight_std, rng)?)?);
        }
        blocks.push(Block::linear_dense(&gaussian(width, width, weight_std, rng)?, None)?);
        Self::new(blocks)
    }

    /// Stack of `depth` mlp-residual blocks of equal width (the 5-block worked example shape).
    pub fn mlp_residual_stack(
        width: usize,
        depth: usize,
        weight_std: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|_| {
                let w = gaussian(width, width, weight_std, rng)?;
                Block::mlp_residual(&w, &vec![0.0; width])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }

    /// Deep linear chain `x(t+1) = W(t) x(t)` without bias.
    pub fn linear_chain(weights: &[Matrix]) -> Result<Self> {
        let blocks = weights
            .iter()
            .map(|w| Block::linear_dense(w, None))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut SeededRng) -> Result<Matrix> {
    crate::numerics::gaussian_matrix(rows, cols, std, rng)
}

/// Default weight scale for the residual builders: standard deviation `1/n` for width `n`.
pub fn default_weight_std(width: usize) -> f64 {
    1.0 / width as f64
}

pub fn forward(net: &Network, x0: &Batch) -> Result<Activations> {
    if x0.cols() != net.input_dim() {
        return Err(Error::dims(net.input_dim(), x0.cols(), "network input"));
    }
    let mut states = Vec::with_capacity(net.depth() + 1);
    let mut pre = Vec::with_capacity(net.depth());
    states.push(x0.clone());
    for block in &net.blocks {
        let (next, z) = block.apply_recording(states.last().expect("non-empty"))?;
        states.push(next);
        pre.push(z);
    }
    Ok(Activations { states, pre })
}

/// Batch-mean `0.5 * |P x - y|^2` for a single state.
pub fn state_loss(x: &Batch, y: &Batch) -> Result<f64> {
    check_loss_shapes(x, y)?;
    let k = y.cols();
    let mut total = 0.0;
    for b in 0..x.rows() {
        let s: f64 = x.row(b)[..k]
            .iter()
            .zip(y.row(b))
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        total += 0.5 * s;
    }
    Ok(total / x.rows() as f64)
}

/// Gradient of [`state_loss`] with respect to the state.
pub fn state_loss_grad(x: &Batch, y: &Batch) -> Result<Batch> {
    check_loss_shapes(x, y)?;
    let k = y.cols();
    let inv = 1.0 / x.rows() as f64;
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for b in 0..x.rows() {
        let (xr, yr) = (x.row(b), y.row(b));
        let gr = g.row_mut(b);
        for j in 0..k {
            gr[j] = (xr[j] - yr[j]) * inv;
        }
    }
    Ok(g)
}

fn check_loss_shapes(x: &Batch, y: &Batch) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::dims(x.rows(), y.rows(), "loss batch size"));
    }
    if x.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if x.cols() < y.cols() {
        return Err(Error::dims(y.cols(), x.cols(), "loss state narrower than label"));
    }
    Ok(())
}

pub fn terminal_loss(net: &Network, acts: &Activations, y: &Batch) -> Result<f64> {
    if acts.len() != net.depth() + 1 {
        return Err(Error::dims(net.depth() + 1, acts.len(), "activation count"));
    }
    if y.cols() > net.output_dim() {
        return Err(Error::dims(net.output_dim(), y.cols(), "label wider than network output"));
    }
    state_loss(acts.output(), y)
}

/// `L(x(t+1)) - L(x(t))`.
pub fn trajectory_loss(net: &Network, acts: &Activations, y: &Batch, t: usize) -> Result<f64> {
    if t >= net.depth() {
        return Err(Error::OutOfRange {
            index: t,
            lo: 0,
            hi: net.depth() - 1,
            context: "trajectory_loss block index",
        });
    }
    Ok(state_loss(acts.state(t + 1), y)? - state_loss(acts.state(t), y)?)
}

/// Smallest `|pre-activation|` over all mlp-residual units, or `None` if the
/// network has no ReLU units. Used to keep finite-difference probes off kinks.
pub fn min_relu_margin(net: &Network, x0: &Batch) -> Result<Option<f64>> {
    let acts = forward(net, x0)?;
    let margin = (0..net.depth())
        .filter_map(|t| acts.pre(t))
        .flat_map(|z| z.as_slice().iter().map(|v| v.abs()))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    Ok(margin)
}
