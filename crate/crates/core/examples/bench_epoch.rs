use std::time::Instant;

use fhlr::datasets::{make_synthetic, SyntheticSpec};
use fhlr::network::ArchitectureSpec;
use fhlr::training::{accuracy, train_seed, TrainConfig};

fn main() {
    let len: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(64);
    let (train, test) = make_synthetic(&SyntheticSpec {
        num_classes: 5,
        channels: 1,
        window_length: len,
        train_count: 3000,
        test_count: 1000,
        class_separability: 1.0,
        noise_floor: 1.0,
        rng_seed: 1,
        num_subjects: 0,
    })
    .unwrap();
    let arch = ArchitectureSpec::standard(1, len, 5).with_width(0.5);
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    let t = Instant::now();
    let out = train_seed(&arch, &train, &cfg).unwrap();
    println!("2 epochs: {:?}", t.elapsed());
    println!("{:?}", out.log);
    println!("test acc {}", accuracy(&out.state, &test).unwrap());
}
