//! One end-to-end run: corrupt labels, train the seed model, acquire 60
//! oracle labels, fine-tune, merge and evaluate over two trials. Pass a JSON
//! config path to run that instead.
//!
//!     cargo run --release --example run_experiment [config.json]

use fhlr::datasets::SyntheticSpec;
use fhlr::experiment::{run_pipeline, DataSource, ExperimentConfig};
use fhlr::noise::NoiseSpec;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(NoiseSpec::symmetric(4, 0.4, 0.2, 0));
    cfg.data = DataSource::Synthetic(SyntheticSpec {
        num_classes: 4,
        channels: 1,
        window_length: 64,
        train_count: 1200,
        test_count: 400,
        class_separability: 1.0,
        noise_floor: 0.8,
        rng_seed: 5,
        num_subjects: 0,
    });
    cfg.seed_training.epochs = 12;
    cfg.acquisition.budget = 60;
    cfg.trials = 2;
    cfg.output_dir = Some("target/example_runs/run_experiment".into());
    cfg
}

fn main() -> fhlr::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => small_config(),
    };
    println!("config {}:\n{}", cfg.checksum(), serde_json::to_string_pretty(&cfg)?);
    let report = run_pipeline(&cfg)?;
    for t in &report.trials {
        println!("trial {} (seed {}): {:.3} {:?}", t.trial, t.trial_seed, t.accuracy, t.phases);
    }
    println!("{}: {:.1} ± {:.1} %", report.label, 100.0 * report.mean, 100.0 * report.std);
    Ok(())
}
