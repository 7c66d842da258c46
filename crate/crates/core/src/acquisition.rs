//! Choosing which training windows are sent to an expert.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::matrix::{argmax, Matrix};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Equal quotas per predicted class.
    Stratified,
    Entropy,
    SmallestMargin,
    /// Most uncertain by the gap between the largest and smallest probability.
    LargestMargin,
    LeastConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub strategy: Strategy,
    pub budget: usize,
    pub rng_seed: u64,
    /// Uncertainty strategies only: fill per-predicted-class quotas with the
    /// most uncertain members of each class instead of ranking globally.
    #[serde(default)]
    pub class_balanced: bool,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::Stratified,
            budget: 100,
            rng_seed: 0,
            class_balanced: false,
        }
    }
}

impl AcquisitionSpec {
    pub fn new(strategy: Strategy, budget: usize, rng_seed: u64) -> Self {
        Self {
            strategy,
            budget,
            rng_seed,
            class_balanced: false,
        }
    }
}

/// Selected indices, in the JSON shape consumed by annotation sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub strategy: Strategy,
    pub seed: u64,
}

fn check_rows(probs: &Matrix) -> Result<()> {
    for (i, row) in probs.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput(format!("row {i} is not a probability vector")));
        }
    }
    Ok(())
}

fn top_two(row: &[f64]) -> (f64, f64) {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in row {
        if p > a {
            b = a;
            a = p;
        } else if p > b {
            b = p;
        }
    }
    (a, b)
}

/// Uncertainty score per row; higher means more uncertain.
pub fn score_uncertainty(probs: &Matrix, strategy: Strategy) -> Result<Vec<f64>> {
    check_rows(probs)?;
    let score = |row: &[f64]| -> f64 {
        match strategy {
            Strategy::Entropy => -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>(),
            Strategy::LeastConfidence => 1.0 - row.iter().copied().fold(0.0, f64::max),
            Strategy::SmallestMargin => {
                let (a, b) = top_two(row);
                -(a - b)
            }
            Strategy::LargestMargin => {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                -(max - min)
            }
            Strategy::Stratified => unreachable!(),
        }
    };
    if strategy == Strategy::Stratified {
        return Err(Error::InvalidInput("stratified selection has no uncertainty score".into()));
    }
    Ok(probs.iter_rows().map(score).collect())
}

/// Pick `spec.budget` pool indices not in `exclude`.
pub fn select_batch(probs: &Matrix, spec: &AcquisitionSpec, exclude: &BTreeSet<usize>) -> Result<Selection> {
    if spec.budget == 0 {
        return Err(Error::InvalidInput("acquisition budget must be at least 1".into()));
    }
    let available: Vec<usize> = (0..probs.rows).filter(|i| !exclude.contains(i)).collect();
    if spec.budget > available.len() {
        return Err(Error::InvalidInput(format!(
            "budget {} exceeds the {} available pool items",
            spec.budget,
            available.len()
        )));
    }
    let mut indices = match spec.strategy {
        Strategy::Stratified => {
            check_rows(probs)?;
            let mut rng = rng::seeded(spec.rng_seed);
            let mut shuffled = available;
            shuffled.shuffle(&mut rng);
            per_class(probs, &shuffled, spec, &mut rng)
        }
        s => {
            let scores = score_uncertainty(probs, s)?;
            let mut ranked = available;
            // descending score, lowest index first on ties
            ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            if spec.class_balanced {
                per_class(probs, &ranked, spec, &mut rng::seeded(spec.rng_seed))
            } else {
                ranked.truncate(spec.budget);
                ranked
            }
        }
    };
    indices.sort_unstable();
    Ok(Selection {
        indices,
        strategy: spec.strategy,
        seed: spec.rng_seed,
    })
}

/// Per predicted class, take the first members of `ordered` up to the class
/// quota, then top up from the rest of `ordered`.
fn per_class(probs: &Matrix, ordered: &[usize], spec: &AcquisitionSpec, rng: &mut rng::Rng) -> Vec<usize> {
    let c = probs.cols;
    let mut quota = vec![spec.budget / c; c];
    for k in index::sample(rng, c, spec.budget % c) {
        quota[k] += 1;
    }
    let mut chosen = BTreeSet::new();
    for &i in ordered {
        let k = argmax(probs.row(i));
        if quota[k] > 0 {
            quota[k] -= 1;
            chosen.insert(i);
        }
    }
    for &i in ordered {
        if chosen.len() >= spec.budget {
            break;
        }
        chosen.insert(i);
    }
    chosen.into_iter().collect()
}
