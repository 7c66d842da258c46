//! Noisy-label learning for wearable time-series classification.
//!
//! The method trains a seed model on label-smoothed noisy labels while keeping
//! an exponential moving average of its weights, fine-tunes that model on a
//! handful of expert-corrected labels, and finally merges the seed and
//! fine-tuned parameters by weighted averaging.
//!
//! Around that core the crate provides a class-conditional label-noise model,
//! a desk-scale synthetic dataset generator plus a canonical binary dataset
//! format, a from-scratch 1D convolutional network, a zoo of robust losses
//! used as baselines, confident learning, acquisition strategies, a simulated
//! annotator panel with Fleiss kappa, an experiment runner, and an HTTP
//! annotation service.

pub mod acquisition;
pub mod annotation;
pub mod confident;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod merging;
pub mod network;
pub mod noise;
pub mod oracle;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
