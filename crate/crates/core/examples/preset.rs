//! Run a named comparison preset on a small synthetic setup and print its
//! table. Defaults to the annotator panel preset; the others take minutes.
//!
//!     cargo run --release --example preset [noise_sweep|asymmetric|...]

use fhlr::datasets::SyntheticSpec;
use fhlr::experiment::{render_csv, render_text, run_preset, DataSource, ExperimentConfig, PresetName};
use fhlr::noise::NoiseSpec;

fn main() -> fhlr::Result<()> {
    let name: PresetName = std::env::args().nth(1).as_deref().unwrap_or("annotator_panel").parse()?;
    let mut cfg = ExperimentConfig::desk(NoiseSpec::symmetric(3, 0.4, 0.2, 0));
    cfg.data = DataSource::Synthetic(SyntheticSpec {
        num_classes: 3,
        channels: 1,
        window_length: 64,
        train_count: 600,
        test_count: 300,
        class_separability: 1.5,
        noise_floor: 0.5,
        rng_seed: 2,
        num_subjects: 0,
    });
    cfg.seed_training.epochs = 12;
    cfg.refine.epochs = 15;
    cfg.acquisition.budget = 30;
    cfg.trials = 2;
    cfg.output_dir = Some("target/example_runs".into());

    let report = run_preset(name, &cfg)?;
    println!("{}", render_text(&report));
    println!("{}", render_csv(&report));
    println!("outputs in target/example_runs/{name}");
    Ok(())
}
