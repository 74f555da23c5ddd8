//! Synthetic regression datasets and minibatch SGD driven by horizon gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{fmt_f64, sha256_hex, Csv};
use crate::gradients::{horizon_gradient, loco_gradient, BlockGrouping};
use crate::network::{forward, state_loss, Batch, Network};
use crate::numerics::{derive_seed, symmetric_eigen, Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Linear,
    Trig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    pub seed: u64,
    pub samples: usize,
    /// Raw input width before any zero padding.
    pub raw_input_dim: usize,
    /// Zero columns appended to the raw inputs.
    pub input_padding: usize,
    pub noise_std: f64,
    /// Generating matrix of the linear task.
    pub teacher: Option<Matrix>,
    /// Right factor applied to the inputs by [`whiten`].
    pub whitening: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub inputs: Batch,
    pub labels: Batch,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Batch, labels: Batch, meta: DatasetMeta) -> Result<Self> {
        if inputs.rows() != labels.rows() {
            return Err(Error::dims(inputs.rows(), labels.rows(), "dataset sample counts"));
        }
        if inputs.rows() == 0 {
            return Err(Error::invalid("dataset has no samples"));
        }
        if !inputs.all_finite() || !labels.all_finite() {
            return Err(Error::invalid("dataset contains non-finite entries"));
        }
        Ok(Self { inputs, labels, meta })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Dataset = serde_json::from_str(text)?;
        Dataset::new(d.inputs, d.labels, d.meta)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    pub fn batch(&self, indices: &[usize]) -> (Batch, Batch) {
        (self.inputs.select_rows(indices), self.labels.select_rows(indices))
    }

    /// Uncentered input covariance `X^T X / N`.
    pub fn input_covariance(&self) -> Result<Matrix> {
        self.inputs.gram()
    }
}

/// `y = W0 x` with `W0` and `x` entries drawn with variance `n^{-1/2}`.
pub fn gen_linear_dataset(n: usize, samples: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || samples == 0 {
        return Err(Error::invalid("linear dataset needs positive size"));
    }
    let std = (n as f64).powf(-0.25);
    let rng = SeededRng::new(seed);
    let teacher = crate::numerics::gaussian_matrix(n, n, std, &mut rng.child(0))?;
    let inputs = crate::numerics::gaussian_matrix(samples, n, std, &mut rng.child(1))?;
    let labels = inputs.matmul_nt(&teacher)?;
    let meta = DatasetMeta {
        kind: DatasetKind::Linear,
        seed,
        samples,
        raw_input_dim: n,
        input_padding: 0,
        noise_std: 0.0,
        teacher: Some(teacher),
        whitening: None,
    };
    Dataset::new(inputs, labels, meta)
}

/// `(1 + eps)(cos pi x, sin pi x, cos 2 pi x, sin 2 pi x)`.
pub fn trig_label(x: f64, eps: f64) -> [f64; 4] {
    use std::f64::consts::PI;
    let s = 1.0 + eps;
    [
        s * (PI * x).cos(),
        s * (PI * x).sin(),
        s * (2.0 * PI * x).cos(),
        s * (2.0 * PI * x).sin(),
    ]
}

pub const TRIG_NOISE_STD: f64 = 0.03;

/// Scalar `x ~ U[-2, 2)` zero-padded to `width` columns, labels from [`trig_label`].
pub fn gen_trig_dataset(samples: usize, width: usize, seed: u64) -> Result<Dataset> {
    gen_trig_dataset_with_noise(samples, width, TRIG_NOISE_STD, seed)
}

pub fn gen_trig_dataset_with_noise(samples: usize, width: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if samples == 0 || width == 0 {
        return Err(Error::invalid("trig dataset needs positive size"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid("noise std must be non-negative"));
    }
    let mut rng = SeededRng::new(seed);
    let mut inputs = Matrix::zeros(samples, width);
    let mut labels = Matrix::zeros(samples, 4);
    for i in 0..samples {
        let x = rng.uniform(-2.0, 2.0);
        let eps = noise_std * rng.standard_normal();
        inputs.set(i, 0, x);
        labels.row_mut(i).copy_from_slice(&trig_label(x, eps));
    }
    let meta = DatasetMeta {
        kind: DatasetKind::Trig,
        seed,
        samples,
        raw_input_dim: 1,
        input_padding: width - 1,
        noise_std,
        teacher: None,
        whitening: None,
    };
    Dataset::new(inputs, labels, meta)
}

/// Right-multiplies the inputs by `C^{-1/2}` (`C = X^T X / N`) so their
/// uncentered covariance becomes the identity.
pub fn whiten(dataset: &Dataset) -> Result<Dataset> {
    let cov = dataset.input_covariance()?;
    let (vals, vecs) = symmetric_eigen(&cov)?;
    let n = vals.len();
    let top = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = top * n as f64 * 1e-12;
    let rank = vals.iter().filter(|v| **v > tol).count();
    if rank < n || top == 0.0 {
        return Err(Error::SingularCovariance { rank, dim: n });
    }
    let inv_sqrt = Matrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| vecs.get(i, k) * vecs.get(j, k) / vals[k].sqrt())
            .sum()
    });
    let inputs = dataset.inputs.matmul(&inv_sqrt)?;
    let mut meta = dataset.meta.clone();
    meta.whitening = Some(inv_sqrt);
    Dataset::new(inputs, dataset.labels.clone(), meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    Mpc { horizon: usize },
    Loco { stages: usize },
}

impl Algorithm {
    pub fn label(&self) -> String {
        match self {
            Algorithm::Mpc { horizon } => format!("mpc-h{horizon}"),
            Algorithm::Loco { stages } => format!("loco-{stages}"),
        }
    }
}

fn default_decay() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, learning_rate: f64, batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self {
            algorithm,
            learning_rate,
            batch_size,
            epochs,
            seed,
            lr_decay: default_decay(),
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr decay must lie in (0, 1]"));
        }
        match self.algorithm {
            Algorithm::Mpc { horizon } if horizon == 0 || horizon > depth => Err(Error::OutOfRange {
                index: horizon,
                lo: 1,
                hi: depth,
                context: "training horizon",
            }),
            Algorithm::Loco { stages } if stages < 2 || stages > depth => Err(Error::OutOfRange {
                index: stages,
                lo: 2,
                hi: depth,
                context: "loco stages",
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Full-dataset terminal loss after each epoch; entry 0 is before any update.
    pub losses: Vec<f64>,
    /// Learning rate in force after each epoch's decay check.
    pub learning_rates: Vec<f64>,
    pub config: TrainConfig,
    pub status: RunStatus,
}

impl TrainRecord {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("epoch 0 is always recorded")
    }

    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["epoch", "loss", "lr"]);
        for (i, (l, r)) in self.losses.iter().zip(&self.learning_rates).enumerate() {
            csv.row(&[i.to_string(), fmt_f64(*l), fmt_f64(*r)]);
        }
        csv.finish()
    }
}

const EVAL_CHUNK: usize = 4096;

/// Mean terminal loss over the whole dataset.
pub fn dataset_loss(net: &Network, data: &Dataset) -> Result<f64> {
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (x, y) = data.batch(&idx);
        let acts = forward(net, &x)?;
        total += state_loss(acts.output(), &y)? * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Shuffle stream shared by every algorithm trained with the same seed.
fn shuffle_rng(seed: u64, epoch: usize) -> SeededRng {
    SeededRng::new(derive_seed(derive_seed(seed, 0x5348_5546), epoch as u64))
}

/// Minibatch SGD. The learning rate is multiplied by `lr_decay` after every epoch
/// whose loss exceeds the previous one. A non-finite loss stops the run with a
/// partial record.
pub fn train_sgd(net: &mut Network, data: &Dataset, config: &TrainConfig) -> Result<TrainRecord> {
    train_sgd_with(net, data, config, |_, _| Ok(()))
}

/// [`train_sgd`] calling `observe(epoch, net)` at epoch 0 and after every completed epoch.
pub fn train_sgd_with(
    net: &mut Network,
    data: &Dataset,
    config: &TrainConfig,
    mut observe: impl FnMut(usize, &Network) -> Result<()>,
) -> Result<TrainRecord> {
    config.validate(net.depth())?;
    if data.inputs.cols() != net.input_dim() {
        return Err(Error::dims(net.input_dim(), data.inputs.cols(), "dataset input width"));
    }
    net.check_labels(&data.labels)?;
    let grouping = match config.algorithm {
        Algorithm::Loco { stages } => Some(BlockGrouping::even(net.depth(), stages)?),
        Algorithm::Mpc { .. } => None,
    };

    let mut lr = config.learning_rate;
    let mut record = TrainRecord {
        losses: vec![dataset_loss(net, data)?],
        learning_rates: vec![lr],
        config: config.clone(),
        status: RunStatus::Completed,
    };
    if !record.losses[0].is_finite() {
        record.status = RunStatus::Diverged { epoch: 0 };
        return Ok(record);
    }
    observe(0, net)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        shuffle_rng(config.seed, epoch).shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = data.batch(chunk);
            let grad = match (&config.algorithm, &grouping) {
                (Algorithm::Mpc { horizon }, _) => horizon_gradient(net, &x, &y, *horizon)?,
                (Algorithm::Loco { .. }, Some(g)) => loco_gradient(net, g, &x, &y)?,
                (Algorithm::Loco { .. }, None) => unreachable!("grouping built above"),
            };
            for (t, g) in grad.per_block.iter().enumerate() {
                net.block_mut(t).apply_update(g, lr)?;
            }
            if net.blocks().iter().any(|b| b.params().iter().any(|p| !p.is_finite())) {
                record.status = RunStatus::Diverged { epoch };
                return Ok(record);
            }
        }
        let loss = dataset_loss(net, data)?;
        if !loss.is_finite() {
            record.status = RunStatus::Diverged { epoch };
            return Ok(record);
        }
        if loss > *record.losses.last().expect("non-empty") {
            lr *= config.lr_decay;
        }
        record.losses.push(loss);
        record.learning_rates.push(lr);
        observe(epoch, net)?;
    }
    Ok(record)
}

/// `ln(J_h(tau) / J0) / ln(J_T(tau) / J0)`.
pub fn loss_rate(record_h: &TrainRecord, record_t: &TrainRecord, tau: usize) -> Result<f64> {
    let j0 = record_h.initial_loss();
    if j0 != record_t.initial_loss() {
        return Err(Error::invalid("records do not share the same initial loss"));
    }
    let (jh, jt) = match (record_h.losses.get(tau), record_t.losses.get(tau)) {
        (Some(a), Some(b)) => (*a, *b),
        _ => {
            return Err(Error::OutOfRange {
                index: tau,
                lo: 0,
                hi: record_h.losses.len().min(record_t.losses.len()).saturating_sub(1),
                context: "loss-rate epoch",
            })
        }
    };
    if !(j0 > 0.0 && jh > 0.0 && jt > 0.0) {
        return Err(Error::UndefinedRate("losses must be positive".into()));
    }
    let denom = (jt / j0).ln();
    if denom == 0.0 {
        return Err(Error::UndefinedRate("full-horizon loss did not move".into()));
    }
    Ok((jh / j0).ln() / denom)
}
