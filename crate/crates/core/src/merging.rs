//! Combining seed and fine-tuned models: weighted parameter averaging,
//! Fisher-weighted averaging, and prediction ensembles.
//!
//! All merges read the EMA parameters of their constituents.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::WindowedDataset;
use crate::matrix::{softmax_in_place, Matrix};
use crate::network::{state_checksum, Constituent, ModelRole, ModelState, Provenance};
use crate::rng;
use crate::{Error, Result};

/// Added to Fisher denominators.
pub const FISHER_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMethod {
    #[default]
    WeightedAverage,
    Fisher,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    #[serde(default)]
    pub method: MergeMethod,
    /// One weight per constituent, seed model first. Empty means "pick the
    /// seed weight from the noise level".
    #[serde(default)]
    pub weights: Vec<f64>,
    /// Grid-search the seed weight on a validation split.
    #[serde(default)]
    pub search_on_validation: bool,
    #[serde(default = "default_fisher_samples")]
    pub fisher_samples: usize,
    #[serde(default)]
    pub ensemble: EnsembleMode,
}

// 256 examples still moved the estimate by 10-25% when doubled
fn default_fisher_samples() -> usize {
    1024
}

impl Default for MergeSpec {
    fn default() -> Self {
        Self {
            method: MergeMethod::WeightedAverage,
            weights: Vec::new(),
            search_on_validation: false,
            fisher_samples: default_fisher_samples(),
            ensemble: EnsembleMode::Probabilities,
        }
    }
}

impl MergeSpec {
    pub fn weighted(weights: Vec<f64>) -> Self {
        Self { weights, ..Self::default() }
    }

    /// Two-model weights for a seed weight `w_b`.
    pub fn pair(w_b: f64) -> Self {
        Self::weighted(vec![w_b, 1.0 - w_b])
    }

    pub fn validate(&self) -> Result<()> {
        if !self.weights.is_empty() {
            check_simplex(&self.weights)?;
        }
        if self.method == MergeMethod::Fisher && self.fisher_samples == 0 {
            return Err(Error::InvalidSpec("fisher_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// The configured weights, or the noise-level default for a seed and a
    /// fine-tuned model.
    pub fn resolved_weights(&self, noise_level: f64) -> Vec<f64> {
        if self.weights.is_empty() {
            let w = default_seed_weight(noise_level);
            vec![w, 1.0 - w]
        } else {
            self.weights.clone()
        }
    }
}

/// Seed-model weight: small when labels are very noisy.
pub fn default_seed_weight(noise_level: f64) -> f64 {
    if noise_level >= 0.4 {
        0.15
    } else {
        0.9
    }
}

/// Candidate seed weights for validation search.
pub const SEED_WEIGHT_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("no weights".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(format!("negative or non-finite weight in {weights:?}")));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

fn check_states(states: &[&ModelState], weights: &[f64]) -> Result<()> {
    if states.len() < 2 {
        return Err(Error::InvalidInput("merging needs at least two models".into()));
    }
    if states.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} models",
            weights.len(),
            states.len()
        )));
    }
    for s in &states[1..] {
        if s.arch != states[0].arch {
            return Err(Error::LayoutMismatch("constituents have different architectures".into()));
        }
        s.ema_params.check_layout(&states[0].ema_params)?;
    }
    check_simplex(weights)
}

/// Elementwise convex combination of the constituents' EMA parameters.
pub fn merge_weighted(states: &[&ModelState], weights: &[f64]) -> Result<ModelState> {
    check_states(states, weights)?;
    // zero-weight terms are skipped so a one-hot weight copies bits exactly
    // (adding +0.0 would turn -0.0 into +0.0)
    let mut terms = states.iter().zip(weights).filter(|(_, &w)| w != 0.0);
    let (first, &w0) = terms.next().expect("simplex weights have a nonzero entry");
    let mut out: Vec<f64> = first.ema_params.values().iter().map(|&v| w0 * v).collect();
    for (s, &w) in terms {
        for (o, &v) in out.iter_mut().zip(s.ema_params.values()) {
            *o += w * v;
        }
    }
    states[0].with_params(out, ModelRole::Merged)
}

/// Diagonal Fisher information, aligned with the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherVector {
    pub values: Vec<f64>,
    /// Examples the estimate averages over.
    pub examples: Vec<usize>,
}

impl FisherVector {
    pub fn estimation_sample_count(&self) -> usize {
        self.examples.len()
    }
}

/// Diagonal of E_x Σ_y p(y | x) (∂ log p(y | x))² over the first `n_samples`
/// examples of a seeded permutation, so a larger count extends the same draw. Labels come from the model's own predictive
/// distribution, summed exactly rather than sampled: a sampled label makes the
/// estimate heavy-tailed on confident models, since a rare label carries a
/// gradient orders of magnitude above the typical one.
pub fn estimate_fisher(state: &ModelState, data: &WindowedDataset, n_samples: usize, seed: u64) -> Result<FisherVector> {
    state.check_dataset(data)?;
    if n_samples == 0 || data.is_empty() {
        return Err(Error::Empty("Fisher estimate needs at least one example".into()));
    }
    if n_samples > data.len() {
        return Err(Error::InvalidInput(format!(
            "{n_samples} Fisher samples requested from {} examples",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut picks = order[..n_samples].to_vec();
    picks.sort_unstable();
    let net = state.network();
    let params = state.ema_params.values();
    let mut acc = vec![0.0; params.len()];
    for &i in &picks {
        let input = net.to_channels_last(data.window(i), 1);
        let (mut probs, tape) = net.forward_cl(params, input, 1, None);
        softmax_in_place(&mut probs);
        for (y, &py) in probs.iter().enumerate() {
            if py == 0.0 {
                continue;
            }
            // d(-log p_y)/dlogits = p - onehot(y); the sign vanishes when squared
            let mut d = probs.clone();
            d[y] -= 1.0;
            let g = net.backward(params, &tape, &d);
            acc.iter_mut().zip(&g).for_each(|(a, g)| *a += py * g * g);
        }
    }
    let n = n_samples as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(FisherVector { values: acc, examples: picks })
}

/// θ* = Σ w_i F_i θ_i / (Σ w_i F_i + ε) per coordinate. Coordinates where
/// every weighted Fisher entry is zero fall back to the plain weighted average.
pub fn merge_fisher(states: &[&ModelState], fishers: &[&FisherVector], weights: &[f64]) -> Result<ModelState> {
    check_states(states, weights)?;
    let n = states[0].num_params();
    if fishers.len() != states.len() || fishers.iter().any(|f| f.values.len() != n) {
        return Err(Error::LayoutMismatch("Fisher vectors do not align with the models".into()));
    }
    if fishers.iter().any(|f| f.values.iter().any(|&v| !(v >= 0.0))) {
        return Err(Error::InvalidInput("Fisher entries must be nonnegative".into()));
    }
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        let (mut num, mut den, mut plain) = (0.0, 0.0, 0.0);
        for ((s, f), &w) in states.iter().zip(fishers).zip(weights) {
            let theta = s.ema_params.values()[j];
            num += w * f.values[j] * theta;
            den += w * f.values[j];
            plain += w * theta;
        }
        *o = if den > 0.0 { num / (den + FISHER_EPS) } else { plain };
    }
    states[0].with_params(out, ModelRole::Merged)
}

/// Mean of per-model softmax outputs (or softmax of mean logits).
pub fn ensemble_predict_with(states: &[&ModelState], ds: &WindowedDataset, mode: EnsembleMode) -> Result<Matrix> {
    let Some(first) = states.first() else {
        return Err(Error::InvalidInput("ensemble needs at least one model".into()));
    };
    for s in states {
        if s.arch != first.arch {
            return Err(Error::LayoutMismatch("ensemble members have different architectures".into()));
        }
    }
    let mut out = Matrix::zeros(ds.len(), first.arch.num_classes);
    let w = ds.window_size();
    for s in states {
        let m = match mode {
            EnsembleMode::Probabilities => s.predict_proba(ds, true)?,
            EnsembleMode::Logits => {
                s.check_dataset(ds)?;
                let mut all = Matrix::zeros(ds.len(), first.arch.num_classes);
                for start in (0..ds.len()).step_by(256) {
                    let end = (start + 256).min(ds.len());
                    let l = s.forward(&ds.x[start * w..end * w], true, None)?;
                    all.data[start * all.cols..end * all.cols].copy_from_slice(&l.data);
                }
                all
            }
        };
        out.data.iter_mut().zip(&m.data).for_each(|(o, v)| *o += v);
    }
    let n = states.len() as f64;
    out.data.iter_mut().for_each(|v| *v /= n);
    Ok(match mode {
        EnsembleMode::Probabilities => out,
        EnsembleMode::Logits => out.softmax(),
    })
}

pub fn ensemble_predict(states: &[&ModelState], ds: &WindowedDataset) -> Result<Matrix> {
    ensemble_predict_with(states, ds, EnsembleMode::Probabilities)
}

/// Provenance block for a merged checkpoint.
pub fn merge_provenance(states: &[&ModelState], weights: &[f64], method: MergeMethod) -> Provenance {
    let method = match method {
        MergeMethod::WeightedAverage => "weighted_average",
        MergeMethod::Fisher => "fisher",
        MergeMethod::Ensemble => "ensemble",
    };
    Provenance {
        method: method.into(),
        constituents: states
            .iter()
            .zip(weights)
            .map(|(s, &w)| Constituent { checksum: state_checksum(s), weight: w })
            .collect(),
    }
}

/// Seed weight from [`SEED_WEIGHT_GRID`] maximizing validation accuracy of
/// the two-model merge; ties go to the smaller weight.
pub fn search_seed_weight(seed: &ModelState, tuned: &ModelState, val: &WindowedDataset) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Err(Error::Empty("validation split is empty".into()));
    }
    let mut best = (SEED_WEIGHT_GRID[0], f64::NEG_INFINITY);
    for &w in &SEED_WEIGHT_GRID {
        let merged = merge_weighted(&[seed, tuned], &[w, 1.0 - w])?;
        let acc = crate::training::accuracy(&merged, val)?;
        if acc > best.1 {
            best = (w, acc);
        }
    }
    Ok(best)
}
