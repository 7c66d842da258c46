//! Find planted label errors with out-of-fold probabilities and a confident
//! joint, then retrain on the pruned set.
//!
//!     cargo run --release --example confident_learning

use fhlr::confident::{estimate_joint, oof_probabilities, prune_and_retrain, pruning_precision};
use fhlr::datasets::{make_synthetic, SyntheticSpec};
use fhlr::network::ArchitectureSpec;
use fhlr::noise::{build_noise_matrix, corrupt_labels, NoiseSpec};
use fhlr::training::{accuracy, TrainConfig};

fn main() -> fhlr::Result<()> {
    let (train, test) = make_synthetic(&SyntheticSpec {
        num_classes: 4,
        channels: 1,
        window_length: 64,
        train_count: 800,
        test_count: 400,
        class_separability: 1.5,
        noise_floor: 0.5,
        rng_seed: 31,
        num_subjects: 0,
    })?;
    let q = build_noise_matrix(&NoiseSpec::symmetric(4, 0.2, 0.0, 1))?;
    let rec = corrupt_labels(&train.y, &q, 2)?;
    let noisy = train.with_labels(rec.noisy_labels.clone())?;
    let arch = ArchitectureSpec::standard(1, 64, 4).with_width(0.5);
    let cfg = TrainConfig { epochs: 12, smoothing_alpha: 0.0, ema_momentum: 0.0, ..TrainConfig::default() };

    let oof = oof_probabilities(&arch, &noisy, 5, &cfg)?;
    let joint = estimate_joint(&oof.probs, &noisy.y)?;
    println!("planted flip rate {:.3}", rec.flip_rate());
    println!("off-diagonal mass {:.3}", joint.off_diagonal_mass());
    println!("confident joint (rows: given label, columns: suspected true):");
    for row in &joint.counts {
        println!("    {row:?}");
    }

    let out = prune_and_retrain(&arch, &noisy, &joint, &oof.probs, &cfg)?;
    println!(
        "pruned {} windows, precision {:.3}",
        out.audit.pruned.len(),
        pruning_precision(&out.audit.pruned, &rec.flipped_mask)
    );
    println!("retrained test accuracy {:.3}", accuracy(&out.state, &test)?);
    Ok(())
}
