//! Seed training on smoothed labels with a weight EMA, few-shot fine-tuning on
//! expert labels, and the shared minibatch loop used by every baseline.

mod loss;
mod optim;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

pub use loss::{compute_loss, loss_and_grad, LossSpec};
pub use optim::Adam;

use crate::datasets::WindowedDataset;
use crate::matrix::{argmax, Matrix};
use crate::network::{build_model, ArchitectureSpec, ModelRole, ModelState, ParameterVector};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub smoothing_alpha: f64,
    pub ema_momentum: f64,
    pub l2: f64,
    pub loss: LossSpec,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 64,
            smoothing_alpha: 0.05,
            ema_momentum: 0.99,
            l2: 1e-4,
            loss: LossSpec::Ce,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.smoothing_alpha) {
            return Err(Error::InvalidSpec(format!("smoothing alpha {} not in [0, 1]", self.smoothing_alpha)));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::InvalidSpec(format!("EMA momentum {} not in [0, 1)", self.ema_momentum)));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.l2 < 0.0 {
            return Err(Error::InvalidSpec("batch size, learning rate and l2 must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertSource {
    Oracle,
    Panel,
    LiveUi,
}

/// Few-shot refinement set: training indices with corrected labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSet {
    pub indices: Vec<usize>,
    pub corrected_labels: Vec<usize>,
    pub source: ExpertSource,
}

impl ExpertSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate(&self, pool_size: usize, num_classes: usize) -> Result<()> {
        if self.indices.len() != self.corrected_labels.len() {
            return Err(Error::ShapeMismatch("expert indices and labels differ in length".into()));
        }
        let unique: BTreeSet<_> = self.indices.iter().collect();
        if unique.len() != self.indices.len() {
            return Err(Error::InvalidInput("expert indices must be unique".into()));
        }
        if let Some(&i) = self.indices.iter().find(|&&i| i >= pool_size) {
            return Err(Error::InvalidInput(format!("expert index {i} outside pool of {pool_size}")));
        }
        if let Some(&l) = self.corrected_labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel { label: l as i64, num_classes });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

/// Rows of `M = (1 - alpha) I + (alpha / C) J` selected by `labels`.
pub fn smooth_targets(labels: &[usize], alpha: f64, num_classes: usize) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidSpec(format!("smoothing alpha {alpha} not in [0, 1]")));
    }
    let off = alpha / num_classes as f64;
    let mut m = Matrix::from_vec(labels.len(), num_classes, vec![off; labels.len() * num_classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::InvalidLabel { label: l as i64, num_classes });
        }
        m.row_mut(i)[l] = 1.0 - alpha + off;
    }
    Ok(m)
}

/// `ema = m * ema + (1 - m) * params`, in place.
pub fn ema_update(ema: &mut ParameterVector, params: &ParameterVector, momentum: f64) -> Result<()> {
    ema.check_layout(params)?;
    ema_update_slice(ema.values_mut(), params.values(), momentum);
    Ok(())
}

fn ema_update_slice(ema: &mut [f64], params: &[f64], momentum: f64) {
    let rest = 1.0 - momentum;
    for (e, &p) in ema.iter_mut().zip(params) {
        *e = momentum * *e + rest * p;
    }
}

/// Mix each example with a shuffled partner using `lambda`.
pub fn mix_pairs(x: &[f64], targets: &Matrix, partner: &[usize], lambda: f64) -> (Vec<f64>, Matrix) {
    let b = targets.rows;
    let w = x.len() / b.max(1);
    let mut xm = vec![0.0; x.len()];
    let mut tm = Matrix::zeros(b, targets.cols);
    for (i, &j) in partner.iter().enumerate() {
        for k in 0..w {
            xm[i * w + k] = lambda * x[i * w + k] + (1.0 - lambda) * x[j * w + k];
        }
        for c in 0..targets.cols {
            tm.row_mut(i)[c] = lambda * targets.row(i)[c] + (1.0 - lambda) * targets.row(j)[c];
        }
    }
    (xm, tm)
}

/// Mixup with `lambda ~ Beta(a, a)` and a seeded partner permutation.
pub fn mixup_batch(x: &[f64], targets: &Matrix, a: f64, rng: &mut Rng) -> Result<(Vec<f64>, Matrix)> {
    if targets.rows < 2 {
        return Err(Error::InvalidInput("mixup needs at least two examples".into()));
    }
    let beta = Beta::new(a, a).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let lambda = beta.sample(rng);
    let mut partner: Vec<usize> = (0..targets.rows).collect();
    partner.shuffle(rng);
    Ok(mix_pairs(x, targets, &partner, lambda))
}

/// Gather windows into a channels-last f64 batch.
fn gather(state: &ModelState, ds: &WindowedDataset, indices: &[usize]) -> Vec<f64> {
    let (c, l) = (ds.channels, ds.window_length);
    let mut out = vec![0.0; indices.len() * c * l];
    for (b, &i) in indices.iter().enumerate() {
        let src = ds.window(i);
        let dst = &mut out[b * c * l..(b + 1) * c * l];
        for ch in 0..c {
            for t in 0..l {
                dst[t * c + ch] = src[ch * l + t] as f64;
            }
        }
    }
    debug_assert_eq!(state.arch.input_channels, c);
    out
}

/// Minibatch optimization of `state` on `ds[indices]` against soft `targets`
/// (one row per entry of `indices`). The EMA is updated after every step.
pub fn fit(
    state: &mut ModelState,
    ds: &WindowedDataset,
    indices: &[usize],
    targets: &Matrix,
    cfg: &TrainConfig,
    val: Option<&WindowedDataset>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    state.check_dataset(ds)?;
    if indices.is_empty() {
        return Err(Error::Empty("no training examples".into()));
    }
    if targets.rows != indices.len() || targets.cols != ds.num_classes {
        return Err(Error::ShapeMismatch("targets do not align with training indices".into()));
    }
    let mut shuffle_rng = rng::seeded(rng::derive(cfg.rng_seed, 1));
    let mut dropout_rng = rng::seeded(rng::derive(cfg.rng_seed, 2));
    let mut mix_rng = rng::seeded(rng::derive(cfg.rng_seed, 3));
    let decay = state.layout().decay_mask();
    let mut adam = Adam::new(state.num_params(), cfg.learning_rate);
    let net = state.network().clone();
    let k = ds.num_classes;
    let mut order: Vec<usize> = (0..indices.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_idx: Vec<usize> = chunk.iter().map(|&o| indices[o]).collect();
            let mut x = gather(state, ds, &batch_idx);
            let mut t = targets.select_rows(chunk);
            if let LossSpec::Mixup { a } = cfg.loss {
                if chunk.len() >= 2 {
                    (x, t) = mixup_batch(&x, &t, a, &mut mix_rng)?;
                }
            }
            let params = state.params.values();
            let (logits, tape) = net.forward_cl(params, x, chunk.len(), Some(&mut dropout_rng));
            let logits = Matrix::from_vec(chunk.len(), k, logits);
            let (mut loss, dlogits) = loss_and_grad(&cfg.loss, &logits, &t)?;
            let mut grad = net.backward(params, &tape, &dlogits.data);
            if cfg.l2 > 0.0 {
                let mut penalty = 0.0;
                for ((g, &w), &d) in grad.iter_mut().zip(params).zip(&decay) {
                    if d {
                        *g += 2.0 * cfg.l2 * w;
                        penalty += w * w;
                    }
                }
                loss += cfg.l2 * penalty;
            }
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            adam.step(state.params.values_mut(), &grad);
            ema_update_slice(state.ema_params.values_mut(), state.params.values(), cfg.ema_momentum);
            loss_sum += loss * chunk.len() as f64;
            correct += (0..chunk.len())
                .filter(|&i| argmax(logits.row(i)) == argmax(t.row(i)))
                .count();
            step += 1;
        }
        let val_accuracy = match val {
            Some(v) if !v.is_empty() => Some(accuracy(state, v)?),
            _ => None,
        };
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / indices.len() as f64,
            train_accuracy: correct as f64 / indices.len() as f64,
            val_accuracy,
        };
        log::debug!("epoch {epoch}: loss {:.4} train acc {:.3}", metrics.loss, metrics.train_accuracy);
        log.push(metrics);
    }
    Ok(log)
}

/// Argmax accuracy of the EMA parameters.
pub fn accuracy(state: &ModelState, ds: &WindowedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("accuracy on an empty dataset".into()));
    }
    let probs = state.predict_proba(ds, true)?;
    let hits = probs.argmax_rows().iter().zip(&ds.y).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / ds.len() as f64)
}

pub struct TrainOutcome {
    pub state: ModelState,
    pub log: Vec<EpochMetrics>,
}

/// Train a fresh model on `train` (labels taken as given, typically noisy)
/// against smoothed targets. Initialization derives from `cfg.rng_seed`.
pub fn train_model(
    arch: &ArchitectureSpec,
    train: &WindowedDataset,
    cfg: &TrainConfig,
    role: ModelRole,
    val: Option<&WindowedDataset>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let mut state = build_model(arch, rng::derive(cfg.rng_seed, 0))?;
    state.role = role;
    let targets = smooth_targets(&train.y, cfg.smoothing_alpha, train.num_classes)?;
    let indices: Vec<usize> = (0..train.len()).collect();
    let log = fit(&mut state, train, &indices, &targets, cfg, val)?;
    Ok(TrainOutcome { state, log })
}

/// Seed training: cross-entropy against label-smoothed noisy labels, EMA on.
pub fn train_seed(
    arch: &ArchitectureSpec,
    train: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_model(arch, train, cfg, ModelRole::Seed, None)
}

/// Continue training `seed` on the expert-labeled examples only, with hard
/// labels, learning rate `eta`, and all layers trainable. Training starts from
/// the seed's EMA parameters (the model the seed stage outputs) and the EMA
/// restarts there.
pub fn fine_tune(
    seed: &ModelState,
    expert: &ExpertSet,
    train: &WindowedDataset,
    eta: f64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if expert.is_empty() {
        return Err(Error::Empty("expert set is empty".into()));
    }
    expert.validate(train.len(), train.num_classes)?;
    seed.check_dataset(train)?;
    let mut state = seed.with_params(seed.ema_params.values().to_vec(), ModelRole::FineTuned)?;
    let cfg = TrainConfig {
        learning_rate: eta,
        smoothing_alpha: 0.0,
        loss: LossSpec::Ce,
        ..cfg.clone()
    };
    let targets = smooth_targets(&expert.corrected_labels, 0.0, train.num_classes)?;
    let log = fit(&mut state, train, &expert.indices, &targets, &cfg, None)?;
    Ok(TrainOutcome { state, log })
}
