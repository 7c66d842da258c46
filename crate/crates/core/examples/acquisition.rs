//! Score a trained model's predictions with each acquisition strategy and
//! pick a 20-window labeling batch.
//!
//!     cargo run --release --example acquisition

use std::collections::BTreeSet;

use fhlr::acquisition::{score_uncertainty, select_batch, AcquisitionSpec, Strategy};
use fhlr::datasets::{make_synthetic, SyntheticSpec};
use fhlr::network::ArchitectureSpec;
use fhlr::training::{train_seed, TrainConfig};

fn main() -> fhlr::Result<()> {
    let (train, _) = make_synthetic(&SyntheticSpec {
        num_classes: 4,
        channels: 1,
        window_length: 64,
        train_count: 600,
        test_count: 4,
        class_separability: 0.8,
        noise_floor: 1.0,
        rng_seed: 8,
        num_subjects: 0,
    })?;
    let arch = ArchitectureSpec::standard(1, 64, 4).with_width(0.5);
    let model = train_seed(&arch, &train, &TrainConfig { epochs: 5, ..TrainConfig::default() })?.state;
    let probs = model.predict_proba(&train, true)?;

    for strategy in [Strategy::Entropy, Strategy::SmallestMargin, Strategy::LargestMargin, Strategy::LeastConfidence] {
        let scores = score_uncertainty(&probs, strategy)?;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let mut spec = AcquisitionSpec::new(strategy, 20, 3);
        let global = select_batch(&probs, &spec, &BTreeSet::new())?;
        spec.class_balanced = true;
        let balanced = select_batch(&probs, &spec, &BTreeSet::new())?;
        println!("{strategy:?}: mean score {mean:.3}");
        println!("    global   {:?}", global.indices);
        println!("    balanced {:?}", balanced.indices);
    }

    // already-labeled windows can be excluded from the next round
    let spec = AcquisitionSpec::new(Strategy::Stratified, 20, 3);
    let first = select_batch(&probs, &spec, &BTreeSet::new())?;
    let exclude: BTreeSet<usize> = first.indices.iter().copied().collect();
    let second = select_batch(&probs, &spec, &exclude)?;
    println!("stratified round 1 {:?}", first.indices);
    println!("stratified round 2 {:?}", second.indices);
    println!("{}", serde_json::to_string(&second)?);
    Ok(())
}
