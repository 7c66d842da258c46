//! Simulate a panel of annotators at several disagreement rates and report
//! Fleiss' kappa and the accuracy of the majority vote.
//!
//!     cargo run --example annotator_panel

use fhlr::oracle::{fleiss_kappa, panel_annotate, AnnotatorPanel};

fn main() -> fhlr::Result<()> {
    let clean: Vec<usize> = (0..3000).map(|i| (i * 7 + i / 5) % 5).collect();
    let items: Vec<usize> = (0..clean.len()).collect();
    println!("{:>5} {:>8} {:>9}", "d", "kappa", "majority");
    for d in [0.0, 0.1, 0.2, 0.3, 0.5] {
        let (votes, majority) = panel_annotate(&items, &clean, &AnnotatorPanel::new(d, 5, 11))?;
        let kappa = fleiss_kappa(&votes, 5)?;
        let right = majority.iter().zip(&clean).filter(|(a, b)| a == b).count();
        println!("{d:>5.2} {:>8.2} {:>8.1}%", 100.0 * kappa, 100.0 * right as f64 / clean.len() as f64);
    }
    Ok(())
}
