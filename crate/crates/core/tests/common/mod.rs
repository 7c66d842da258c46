#![allow(dead_code)]

pub mod gradcheck;

use fhlr::datasets::SyntheticSpec;
use fhlr::experiment::{DataSource, ExperimentConfig};
use fhlr::noise::NoiseSpec;

/// Three-class, 64-sample synthetic run that finishes in about a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(NoiseSpec::symmetric(3, 0.2, 0.2, 0));
    cfg.data = DataSource::Synthetic(tiny_synthetic());
    cfg.seed_training.epochs = 2;
    cfg.refine.epochs = 2;
    cfg.acquisition.budget = 9;
    cfg.trials = 2;
    cfg
}

pub fn tiny_synthetic() -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 3,
        channels: 1,
        window_length: 64,
        train_count: 90,
        test_count: 30,
        class_separability: 2.0,
        noise_floor: 0.3,
        rng_seed: 4,
        num_subjects: 0,
    }
}
