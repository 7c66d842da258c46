//! Generate the synthetic benchmark, save it in the canonical on-disk
//! layout and load it back.
//!
//!     cargo run --example synthetic_dataset [out_dir]

use std::collections::BTreeMap;

use fhlr::datasets::{load_canonical, make_synthetic, write_canonical, SyntheticSpec, SYNTHETIC_SAMPLE_RATE_HZ};

fn main() -> fhlr::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example_data/synthetic".into());
    let spec = SyntheticSpec {
        num_classes: 4,
        channels: 3,
        window_length: 100,
        train_count: 400,
        test_count: 100,
        class_separability: 1.0,
        noise_floor: 0.5,
        rng_seed: 42,
        num_subjects: 0,
    };
    let (train, test) = make_synthetic(&spec)?;
    let splits = BTreeMap::from([("train".to_string(), train), ("test".to_string(), test)]);
    let manifest = write_canonical(&out, "synthetic", SYNTHETIC_SAMPLE_RATE_HZ, &splits)?;
    println!("wrote {out}: {} classes, {} channels, L={}", manifest.num_classes, manifest.channels, manifest.window_length);

    let back = load_canonical(&out)?;
    for (name, ds) in &back.splits {
        println!("{name}: {} windows, class counts {:?}", ds.len(), ds.class_counts());
        assert_eq!(ds, &splits[name]);
    }
    let w = back.split("train")?.window(0);
    println!("first window, channel 0: {:.2?}...", &w[..8]);
    Ok(())
}
