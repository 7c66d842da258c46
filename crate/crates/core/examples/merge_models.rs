//! Train a seed model on noisy labels, fine-tune it on 60 expert labels, then
//! combine the two by weight averaging, Fisher merging and ensembling.
//!
//!     cargo run --release --example merge_models

use std::collections::BTreeSet;

use fhlr::acquisition::{select_batch, AcquisitionSpec};
use fhlr::datasets::{make_synthetic, SyntheticSpec};
use fhlr::merging::{default_seed_weight, ensemble_predict, estimate_fisher, merge_fisher, merge_weighted};
use fhlr::network::ArchitectureSpec;
use fhlr::noise::{build_noise_matrix, corrupt_labels, NoiseSpec};
use fhlr::oracle::oracle_labels;
use fhlr::training::{accuracy, fine_tune, train_seed, ExpertSet, ExpertSource, TrainConfig};

fn main() -> fhlr::Result<()> {
    let (train, test) = make_synthetic(&SyntheticSpec {
        num_classes: 4,
        channels: 1,
        window_length: 64,
        train_count: 1200,
        test_count: 400,
        class_separability: 1.0,
        noise_floor: 0.8,
        rng_seed: 5,
        num_subjects: 0,
    })?;
    let level = 0.5;
    let q = build_noise_matrix(&NoiseSpec::symmetric(4, level, 0.0, 1))?;
    let noisy = train.with_labels(corrupt_labels(&train.y, &q, 2)?.noisy_labels)?;
    let arch = ArchitectureSpec::standard(1, 64, 4).with_width(0.5);
    let seed = train_seed(&arch, &noisy, &TrainConfig { epochs: 15, ..TrainConfig::default() })?.state;

    let probs = seed.predict_proba(&noisy, true)?;
    let picked = select_batch(&probs, &AcquisitionSpec { budget: 60, ..AcquisitionSpec::default() }, &BTreeSet::new())?;
    let expert = ExpertSet {
        corrected_labels: oracle_labels(&picked.indices, &train.y)?,
        indices: picked.indices,
        source: ExpertSource::Oracle,
    };
    let refine = TrainConfig { epochs: 30, batch_size: 16, rng_seed: 3, ..TrainConfig::default() };
    let tuned = fine_tune(&seed, &expert, &noisy, 5e-4, &refine)?.state;

    let w = default_seed_weight(level);
    let weights = [w, 1.0 - w];
    let averaged = merge_weighted(&[&seed, &tuned], &weights)?;
    let fa = estimate_fisher(&seed, &noisy, 256, 1)?;
    let fb = estimate_fisher(&tuned, &noisy, 256, 2)?;
    let fisher = merge_fisher(&[&seed, &tuned], &[&fa, &fb], &weights)?;
    let ens = ensemble_predict(&[&seed, &tuned], &test)?;
    let ens_acc = ens.argmax_rows().iter().zip(&test.y).filter(|(a, b)| a == b).count() as f64 / test.len() as f64;

    println!("seed weight {w}");
    println!("seed       {:.3}", accuracy(&seed, &test)?);
    println!("fine-tuned {:.3}", accuracy(&tuned, &test)?);
    println!("averaged   {:.3}", accuracy(&averaged, &test)?);
    println!("fisher     {:.3}", accuracy(&fisher, &test)?);
    println!("ensemble   {ens_acc:.3}");
    Ok(())
}
