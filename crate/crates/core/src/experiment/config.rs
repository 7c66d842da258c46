use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::AcquisitionSpec;
use crate::datasets::{load_canonical, make_synthetic, ChannelMeans, SyntheticSpec, WindowedDataset};
use crate::merging::MergeSpec;
use crate::network::ArchitectureSpec;
use crate::noise::NoiseSpec;
use crate::oracle::AnnotatorPanel;
use crate::training::{LossSpec, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Canonical {
        path: PathBuf,
        #[serde(default = "default_train_split")]
        train_split: String,
        #[serde(default = "default_test_split")]
        test_split: String,
        #[serde(default)]
        val_split: Option<String>,
        /// Subtract per-channel training means from every split.
        #[serde(default = "yes")]
        normalize: bool,
    },
}

fn default_train_split() -> String {
    "train".into()
}

fn default_test_split() -> String {
    "test".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClTag {
    ConfidentLearning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClSpec {
    pub kind: ClTag,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    5
}

impl Default for ClSpec {
    fn default() -> Self {
        Self {
            kind: ClTag::ConfidentLearning,
            folds: default_folds(),
        }
    }
}

/// A comparison method trained on the noisy labels alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Baseline {
    Loss(LossSpec),
    ConfidentLearning(ClSpec),
}

impl Baseline {
    pub fn label(&self) -> &'static str {
        match self {
            Baseline::Loss(l) => l.label(),
            Baseline::ConfidentLearning(_) => "CL",
        }
    }

    /// The eight comparison methods with default hyperparameters.
    pub fn all() -> Vec<Baseline> {
        vec![
            Baseline::Loss(LossSpec::Ce),
            Baseline::Loss(LossSpec::ls()),
            Baseline::Loss(LossSpec::mixup()),
            Baseline::Loss(LossSpec::poly()),
            Baseline::Loss(LossSpec::bi_tempered()),
            Baseline::Loss(LossSpec::logit_clip()),
            Baseline::ConfidentLearning(ClSpec::default()),
            Baseline::Loss(LossSpec::focal()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleConfig {
    Oracle,
    Panel {
        #[serde(default = "default_annotators")]
        num_annotators: usize,
        disagreement_rate: f64,
        #[serde(default)]
        rng_seed: u64,
    },
    /// Labels collected by the annotation service, read from a finalized
    /// expert-set file.
    Live { expert_set: PathBuf },
}

fn default_annotators() -> usize {
    10
}

impl OracleConfig {
    pub fn panel(disagreement_rate: f64) -> Self {
        OracleConfig::Panel {
            num_annotators: default_annotators(),
            disagreement_rate,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            eta: 5e-4,
            epochs: 30,
            batch_size: 16,
        }
    }
}

/// Which stages of the method are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Components {
    pub ls: bool,
    pub ema: bool,
    pub ft: bool,
    pub merge: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            ls: true,
            ema: true,
            ft: true,
            merge: true,
        }
    }
}

impl Components {
    pub const fn new(ls: bool, ema: bool, ft: bool, merge: bool) -> Self {
        Self { ls, ema, ft, merge }
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [(self.ls, "LS"), (self.ema, "EMA"), (self.ft, "FT"), (self.merge, "Merge")] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub noise: NoiseSpec,
    #[serde(default = "default_width")]
    pub width_multiplier: f64,
    #[serde(default)]
    pub seed_training: TrainConfig,
    /// Replace the method with a baseline trained on noisy labels.
    #[serde(default)]
    pub baseline: Option<Baseline>,
    #[serde(default)]
    pub acquisition: AcquisitionSpec,
    #[serde(default = "default_oracle")]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub merge: MergeSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub components: Components,
    /// Baselines compared by the presets.
    #[serde(default = "Baseline::all")]
    pub compare: Vec<Baseline>,
}

fn default_width() -> f64 {
    0.5
}

fn default_oracle() -> OracleConfig {
    OracleConfig::Oracle
}

fn default_trials() -> usize {
    3
}

/// Five-class, single-channel synthetic data sized for CPU runs.
pub fn desk_synthetic() -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 5,
        channels: 1,
        window_length: 128,
        train_count: 3000,
        test_count: 1000,
        class_separability: 1.0,
        noise_floor: 1.0,
        rng_seed: 1,
        num_subjects: 0,
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults on synthetic data.
    pub fn desk(noise: NoiseSpec) -> Self {
        Self {
            data: DataSource::Synthetic(desk_synthetic()),
            noise,
            width_multiplier: default_width(),
            seed_training: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            baseline: None,
            acquisition: AcquisitionSpec::default(),
            oracle: OracleConfig::Oracle,
            refine: RefineConfig::default(),
            merge: MergeSpec::default(),
            trials: default_trials(),
            base_seed: 0,
            output_dir: None,
            save_checkpoints: false,
            components: Components::default(),
            compare: Baseline::all(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.components.merge && !self.components.ft {
            return bad("merging requires fine-tuning".into());
        }
        if !(self.refine.eta > 0.0) || self.refine.batch_size == 0 {
            return bad("refine needs a positive eta and batch size".into());
        }
        if self.acquisition.budget == 0 {
            return bad("acquisition budget must be at least 1".into());
        }
        if let OracleConfig::Panel { num_annotators, disagreement_rate, .. } = self.oracle {
            AnnotatorPanel {
                num_annotators,
                disagreement_rate,
                num_classes: self.noise.num_classes,
                rng_seed: 0,
            }
            .validate()?;
        }
        if let Some(Baseline::ConfidentLearning(cl)) = &self.baseline {
            if cl.folds < 2 {
                return bad("confident learning needs at least 2 folds".into());
            }
        }
        if let Some(Baseline::Loss(l)) = &self.baseline {
            l.validate()?;
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
            if s.num_classes != self.noise.num_classes {
                return bad(format!(
                    "noise model has {} classes, data has {}",
                    self.noise.num_classes, s.num_classes
                ));
            }
        }
        self.noise.validate()?;
        self.seed_training.validate()?;
        self.merge.validate()?;
        Ok(())
    }

    /// SHA-256 of the serialized config.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn label(&self) -> String {
        match &self.baseline {
            Some(b) => b.label().into(),
            None if self.components == Components::default() => "FHLR".into(),
            None => format!("FHLR[{}]", self.components.label()),
        }
    }
}

/// Train, test and optional validation splits.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub val: Option<WindowedDataset>,
    pub sample_rate_hz: f64,
}

impl PreparedData {
    pub fn arch(&self, width_multiplier: f64) -> ArchitectureSpec {
        ArchitectureSpec::standard(self.train.channels, self.train.window_length, self.train.num_classes)
            .with_width(width_multiplier)
    }
}

pub fn prepare_data(source: &DataSource) -> Result<PreparedData> {
    match source {
        DataSource::Synthetic(spec) => {
            let (train, test) = make_synthetic(spec)?;
            Ok(PreparedData {
                train,
                test,
                val: None,
                sample_rate_hz: crate::datasets::SYNTHETIC_SAMPLE_RATE_HZ,
            })
        }
        DataSource::Canonical {
            path,
            train_split,
            test_split,
            val_split,
            normalize,
        } => {
            let ds = load_canonical(path)?;
            let mut train = ds.split(train_split)?.clone();
            let mut test = ds.split(test_split)?.clone();
            let mut val = val_split.as_ref().map(|v| ds.split(v).cloned()).transpose()?;
            if *normalize {
                let means = ChannelMeans::fit(&train);
                means.apply(&mut train);
                means.apply(&mut test);
                if let Some(v) = val.as_mut() {
                    means.apply(v);
                }
            }
            Ok(PreparedData {
                train,
                test,
                val,
                sample_rate_hz: ds.manifest.sample_rate_hz,
            })
        }
    }
}
