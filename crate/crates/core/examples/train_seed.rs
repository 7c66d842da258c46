//! Train on 40% noisy labels with plain cross-entropy and with the seed
//! recipe (smoothed targets plus EMA weights), then compare test accuracy.
//!
//!     cargo run --release --example train_seed

use fhlr::datasets::{make_synthetic, SyntheticSpec};
use fhlr::network::ArchitectureSpec;
use fhlr::noise::{build_noise_matrix, corrupt_labels, NoiseSpec};
use fhlr::training::{accuracy, train_seed, TrainConfig};

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
    let q = build_noise_matrix(&NoiseSpec::symmetric(4, 0.4, 0.0, 1))?;
    let noisy = train.with_labels(corrupt_labels(&train.y, &q, 2)?.noisy_labels)?;
    let arch = ArchitectureSpec::standard(1, 64, 4).with_width(0.5);

    let plain = TrainConfig { epochs: 15, smoothing_alpha: 0.0, ema_momentum: 0.0, ..TrainConfig::default() };
    let seed = TrainConfig { epochs: 15, ..TrainConfig::default() };
    for (name, cfg) in [("cross-entropy", plain), ("smoothed + EMA", seed)] {
        let out = train_seed(&arch, &noisy, &cfg)?;
        let last = out.log.last().expect("at least one epoch");
        println!(
            "{name:>15}: final loss {:.3}, noisy-train acc {:.3}, test acc {:.3}",
            last.loss,
            accuracy(&out.state, &noisy)?,
            accuracy(&out.state, &test)?
        );
    }
    Ok(())
}
