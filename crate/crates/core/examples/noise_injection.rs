//! Build symmetric and pair-flip noise matrices and corrupt a label vector.
//!
//!     cargo run --example noise_injection

use fhlr::noise::{build_noise_matrix, corrupt_labels, measured_level, measured_sparsity, NoiseSpec};

fn main() -> fhlr::Result<()> {
    let clean: Vec<usize> = (0..5000).map(|i| i % 5).collect();
    for spec in [
        NoiseSpec::symmetric(5, 0.4, 0.0, 7),
        NoiseSpec::symmetric(5, 0.4, 0.5, 7),
        NoiseSpec::asymmetric(5, 0.4, 7),
    ] {
        let q = build_noise_matrix(&spec)?;
        println!(
            "{:?} n_l={} n_s={}: measured level {:.3}, zero off-diagonal fraction {:.2}",
            spec.mode,
            spec.level,
            spec.sparsity,
            measured_level(&q)?,
            measured_sparsity(&q)?
        );
        // rows are observed labels, columns true classes
        for obs in 0..5 {
            let row: Vec<String> = (0..5).map(|t| format!("{:.3}", q.get(obs, t))).collect();
            println!("    {}", row.join("  "));
        }
        let rec = corrupt_labels(&clean, &q, 1)?;
        println!("    flipped {:.1}% of {} labels\n", 100.0 * rec.flip_rate(), clean.len());
    }
    Ok(())
}
