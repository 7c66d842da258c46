//! The 1D convolutional classifier and its flat parameter view.
//!
//! Six conv blocks (conv, group norm, ELU) with max-pooling after blocks 2, 4
//! and 6, dropout after the last block, global average pooling and a dense
//! layer emitting raw logits.

mod checkpoint;
mod cnn;
mod params;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, state_checksum, CheckpointManifest, Constituent, Provenance,
};
pub use cnn::{Network, Tape};
pub use params::{Layout, LayoutEntry, ParameterVector};

use crate::datasets::WindowedDataset;
use crate::matrix::Matrix;
use crate::rng::{self, Rng};
use crate::{Error, Result};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_channels: usize,
    pub input_length: usize,
    pub num_classes: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters: Vec<usize>,
    pub norm_groups: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    /// 1-based block numbers followed by max-pooling.
    pub pool_after_blocks: Vec<usize>,
    pub dropout_rate: f64,
    pub l2_coefficient: f64,
    pub width_multiplier: f64,
}

impl ArchitectureSpec {
    /// The full-size architecture for the given input shape.
    pub fn standard(input_channels: usize, input_length: usize, num_classes: usize) -> Self {
        Self {
            input_channels,
            input_length,
            num_classes,
            kernel_sizes: vec![8, 8, 8, 6, 6, 4],
            filters: vec![24, 32, 64, 72, 96, 128],
            norm_groups: 4,
            pool_size: 8,
            pool_stride: 2,
            pool_after_blocks: vec![2, 4, 6],
            dropout_rate: 0.15,
            l2_coefficient: 1e-4,
            width_multiplier: 1.0,
        }
    }

    pub fn with_width(mut self, width_multiplier: f64) -> Self {
        self.width_multiplier = width_multiplier;
        self
    }

    pub fn effective_filters(&self) -> Vec<usize> {
        self.filters
            .iter()
            .map(|&f| ((f as f64 * self.width_multiplier).round() as usize).max(1))
            .collect()
    }

    /// Group count of the first normalization: the number of input channels,
    /// or its largest value that still divides the first filter count.
    pub fn first_norm_groups(&self) -> usize {
        let f = self.effective_filters()[0];
        (1..=self.input_channels.min(f)).rev().find(|g| f % g == 0).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.input_channels == 0 || self.input_length == 0 || self.num_classes < 2 {
            return bad("architecture needs positive input shape and at least 2 classes".into());
        }
        if self.filters.is_empty() || self.filters.len() != self.kernel_sizes.len() {
            return bad("filters and kernel_sizes must be nonempty and equally long".into());
        }
        if self.kernel_sizes.contains(&0) || self.norm_groups == 0 {
            return bad("kernel sizes and group counts must be positive".into());
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return bad(format!("width multiplier {} not in (0, 1]", self.width_multiplier));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} not in [0, 1)", self.dropout_rate));
        }
        let filters = self.effective_filters();
        for (i, &f) in filters.iter().enumerate().skip(1) {
            if f % self.norm_groups != 0 {
                return bad(format!(
                    "block {} has {f} filters, not divisible by {} groups",
                    i + 1,
                    self.norm_groups
                ));
            }
        }
        let mut len = self.input_length;
        for n in 1..=filters.len() {
            if self.pool_after_blocks.contains(&n) {
                if self.pool_stride == 0 || len < self.pool_size {
                    return bad(format!("sequence of length {len} too short to pool after block {n}"));
                }
                len = (len - self.pool_size) / self.pool_stride + 1;
            }
        }
        if self.pool_after_blocks.iter().any(|&b| b == 0 || b > filters.len()) {
            return bad("pool_after_blocks refers to a missing block".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Seed,
    FineTuned,
    Merged,
    Baseline,
}

/// Raw parameters plus their exponential moving average.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub params: ParameterVector,
    pub ema_params: ParameterVector,
    pub arch: ArchitectureSpec,
    pub role: ModelRole,
    net: Arc<Network>,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.ema_params == other.ema_params
            && self.arch == other.arch
            && self.role == other.role
    }
}

/// Build a freshly initialized model; the EMA starts equal to the parameters.
pub fn build_model(arch: &ArchitectureSpec, init_seed: u64) -> Result<ModelState> {
    let net = Arc::new(Network::compile(arch)?);
    let mut rng = rng::seeded(init_seed);
    let values = net.init_params(&mut rng);
    let params = ParameterVector::new(net.layout().clone(), values)?;
    Ok(ModelState {
        ema_params: params.clone(),
        params,
        arch: arch.clone(),
        role: ModelRole::Seed,
        net,
    })
}

impl ModelState {
    pub(crate) fn from_parts(
        arch: ArchitectureSpec,
        role: ModelRole,
        params: Vec<f64>,
        ema: Vec<f64>,
    ) -> Result<Self> {
        let net = Arc::new(Network::compile(&arch)?);
        let layout = net.layout().clone();
        Ok(Self {
            params: ParameterVector::new(layout.clone(), params)?,
            ema_params: ParameterVector::new(layout, ema)?,
            arch,
            role,
            net,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.params.layout()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// A copy with both parameter sets replaced by `values`.
    pub fn with_params(&self, values: Vec<f64>, role: ModelRole) -> Result<Self> {
        let params = ParameterVector::new(self.layout().clone(), values)?;
        Ok(Self {
            ema_params: params.clone(),
            params,
            arch: self.arch.clone(),
            role,
            net: self.net.clone(),
        })
    }

    /// The evaluated parameter set.
    pub fn eval_params(&self, use_ema: bool) -> &ParameterVector {
        if use_ema {
            &self.ema_params
        } else {
            &self.params
        }
    }

    fn check_input(&self, x: &[f32]) -> Result<usize> {
        let size = self.net.input_size();
        if x.len() % size != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input of {} values is not a batch of {}x{} windows",
                x.len(),
                self.arch.input_channels,
                self.arch.input_length
            )));
        }
        Ok(x.len() / size)
    }

    /// Logits for a `[B, channels, length]` batch. Dropout is active only
    /// when `dropout` carries an RNG.
    pub fn forward(&self, x: &[f32], use_ema: bool, dropout: Option<&mut Rng>) -> Result<Matrix> {
        let batch = self.check_input(x)?;
        let input = self.net.to_channels_last(x, batch);
        let (logits, _) = self
            .net
            .forward_cl(self.eval_params(use_ema).values(), input, batch, dropout);
        Ok(Matrix::from_vec(batch, self.arch.num_classes, logits))
    }

    /// Softmax probabilities for every window of `ds`, evaluated in chunks.
    pub fn predict_proba(&self, ds: &WindowedDataset, use_ema: bool) -> Result<Matrix> {
        self.check_dataset(ds)?;
        let mut out = Matrix::zeros(ds.len(), self.arch.num_classes);
        let w = ds.window_size();
        for start in (0..ds.len()).step_by(EVAL_BATCH) {
            let end = (start + EVAL_BATCH).min(ds.len());
            let probs = self.forward(&ds.x[start * w..end * w], use_ema, None)?.softmax();
            out.data[start * out.cols..end * out.cols].copy_from_slice(&probs.data);
        }
        Ok(out)
    }

    pub fn check_dataset(&self, ds: &WindowedDataset) -> Result<()> {
        if ds.channels != self.arch.input_channels
            || ds.window_length != self.arch.input_length
            || ds.num_classes != self.arch.num_classes
        {
            return Err(Error::ShapeMismatch(format!(
                "dataset is {} classes of {}x{}, model expects {} classes of {}x{}",
                ds.num_classes,
                ds.channels,
                ds.window_length,
                self.arch.num_classes,
                self.arch.input_channels,
                self.arch.input_length
            )));
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> ArchitectureSpec {
        ArchitectureSpec::standard(2, 64, 3).with_width(0.5)
    }

    fn batch(n: usize, arch: &ArchitectureSpec, seed: u64) -> Vec<f32> {
        use rand::Rng as _;
        let mut r = rng::seeded(seed);
        (0..n * arch.input_channels * arch.input_length)
            .map(|_| r.random_range(-2.0f32..2.0))
            .collect()
    }

    #[test]
    fn logits_shape_and_softmax_rows() {
        let arch = small_arch();
        let m = build_model(&arch, 1).unwrap();
        let logits = m.forward(&batch(5, &arch, 2), false, None).unwrap();
        assert_eq!((logits.rows, logits.cols), (5, 3));
        for row in logits.softmax().iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model(&small_arch(), 7).unwrap();
        let b = build_model(&small_arch(), 7).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.params, a.ema_params);
        assert_ne!(a.params, build_model(&small_arch(), 8).unwrap().params);
    }

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        let arch = ArchitectureSpec::standard(6, 400, 6);
        let m = build_model(&arch, 0).unwrap();
        // conv weights + bias + gamma + beta per block, then the dense layer
        let mut expected = 0;
        let mut cin = 6;
        for (&k, &f) in [8, 8, 8, 6, 6, 4].iter().zip(&[24, 32, 64, 72, 96, 128]) {
            expected += f * k * cin + 3 * f;
            cin = f;
        }
        expected += 128 * 6 + 6;
        assert_eq!(m.num_params(), expected);
    }

    #[test]
    fn ema_forward_matches_params_after_build() {
        let arch = small_arch();
        let m = build_model(&arch, 3).unwrap();
        let x = batch(4, &arch, 9);
        assert_eq!(m.forward(&x, true, None).unwrap(), m.forward(&x, false, None).unwrap());
    }

    #[test]
    fn eval_forward_is_deterministic_and_dropout_is_not() {
        let arch = small_arch();
        let m = build_model(&arch, 3).unwrap();
        let x = batch(4, &arch, 9);
        assert_eq!(m.forward(&x, false, None).unwrap(), m.forward(&x, false, None).unwrap());
        let mut r = rng::seeded(1);
        let a = m.forward(&x, false, Some(&mut r)).unwrap();
        let b = m.forward(&x, false, Some(&mut r)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn batch_permutation_equivariance() {
        let arch = small_arch();
        let m = build_model(&arch, 5).unwrap();
        let x = batch(3, &arch, 4);
        let w = arch.input_channels * arch.input_length;
        let perm = [2usize, 0, 1];
        let xp: Vec<f32> = perm.iter().flat_map(|&i| x[i * w..(i + 1) * w].to_vec()).collect();
        let a = m.forward(&x, false, None).unwrap();
        let b = m.forward(&xp, false, None).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for (u, v) in b.row(r).iter().zip(a.row(i)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_group_count_fallback() {
        let arch = ArchitectureSpec::standard(23, 512, 5);
        assert_eq!(arch.first_norm_groups(), 12);
        assert_eq!(ArchitectureSpec::standard(6, 400, 6).first_norm_groups(), 6);
        assert_eq!(ArchitectureSpec::standard(1, 3000, 5).first_norm_groups(), 1);
        assert_eq!(ArchitectureSpec::standard(12, 2500, 4).first_norm_groups(), 12);
    }

    #[test]
    fn invalid_architectures() {
        let mut arch = small_arch();
        arch.width_multiplier = 0.3; // 32 * 0.3 -> 10 filters, not divisible by 4
        assert!(matches!(build_model(&arch, 0), Err(Error::InvalidSpec(_))));
        let short = ArchitectureSpec::standard(1, 16, 3);
        assert!(build_model(&short, 0).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let arch = small_arch();
        let m = build_model(&arch, 0).unwrap();
        assert!(matches!(m.forward(&[0.0; 7], false, None), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn flatten_round_trip() {
        let m = build_model(&small_arch(), 2).unwrap();
        let flat = m.flatten();
        let back = ParameterVector::unflatten(flat.clone(), m.layout().clone()).unwrap();
        assert_eq!(back, m.params);
        assert_eq!(flat.len(), build_model(&small_arch(), 99).unwrap().flatten().len());
        assert!(ParameterVector::unflatten(vec![0.0; 3], m.layout().clone()).is_err());
    }

    #[test]
    fn finite_logits_for_random_inputs() {
        let arch = small_arch();
        let m = build_model(&arch, 11).unwrap();
        // 1000 random windows, evaluated in one pass
        let x = batch(1000, &arch, 12);
        let logits = m.forward(&x, false, None).unwrap();
        assert!(logits.data.iter().all(|v| v.is_finite()));
    }
}
