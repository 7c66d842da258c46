//! Clean-label sources for refinement: a ground-truth oracle and a simulated
//! panel of annotators with a controlled disagreement rate.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Labels straight from the clean source.
pub fn oracle_labels(indices: &[usize], clean: &[usize]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&i| {
            clean
                .get(i)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("index {i} out of range for {} labels", clean.len())))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorPanel {
    #[serde(default = "default_annotators")]
    pub num_annotators: usize,
    pub disagreement_rate: f64,
    pub num_classes: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_annotators() -> usize {
    10
}

impl AnnotatorPanel {
    pub fn new(disagreement_rate: f64, num_classes: usize, rng_seed: u64) -> Self {
        Self {
            num_annotators: default_annotators(),
            disagreement_rate,
            num_classes,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_annotators < 2 {
            return Err(Error::InvalidSpec("a panel needs at least 2 annotators".into()));
        }
        if !(0.0..=1.0).contains(&self.disagreement_rate) {
            return Err(Error::InvalidSpec(format!(
                "disagreement rate {} outside [0, 1]",
                self.disagreement_rate
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("a panel needs at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Votes per item, one row per item and one column per annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    pub num_annotators: usize,
    pub votes: Vec<Vec<usize>>,
}

impl AnnotationMatrix {
    pub fn new(votes: Vec<Vec<usize>>) -> Result<Self> {
        let a = votes.first().map_or(0, Vec::len);
        if votes.iter().any(|r| r.len() != a) {
            return Err(Error::ShapeMismatch("every item needs the same number of votes".into()));
        }
        Ok(Self { num_annotators: a, votes })
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// Per-item category counts n_ic.
    pub fn counts(&self, num_classes: usize) -> Result<Vec<Vec<usize>>> {
        self.votes
            .iter()
            .map(|row| {
                let mut c = vec![0; num_classes];
                for &v in row {
                    *c.get_mut(v).ok_or(Error::InvalidLabel { label: v as i64, num_classes })? += 1;
                }
                Ok(c)
            })
            .collect()
    }
}

/// Most frequent label; ties go to the smallest class index.
pub fn majority_vote(votes: &[usize], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for &v in votes {
        counts[v] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Each annotator reports the clean label with probability 1 − d and
/// otherwise a uniformly drawn different class.
pub fn panel_annotate(indices: &[usize], clean: &[usize], panel: &AnnotatorPanel) -> Result<(AnnotationMatrix, Vec<usize>)> {
    panel.validate()?;
    let truth = oracle_labels(indices, clean)?;
    let c = panel.num_classes;
    let mut rng = rng::seeded(panel.rng_seed);
    let mut votes = Vec::with_capacity(truth.len());
    for &y in &truth {
        if y >= c {
            return Err(Error::InvalidLabel { label: y as i64, num_classes: c });
        }
        let row: Vec<usize> = (0..panel.num_annotators)
            .map(|_| {
                if rng.random::<f64>() < panel.disagreement_rate {
                    let other = rng.random_range(0..c - 1);
                    if other >= y { other + 1 } else { other }
                } else {
                    y
                }
            })
            .collect();
        votes.push(row);
    }
    let aggregated = votes.iter().map(|r| majority_vote(r, c)).collect();
    Ok((
        AnnotationMatrix {
            num_annotators: panel.num_annotators,
            votes,
        },
        aggregated,
    ))
}

/// Fleiss' kappa over items with a fixed number of raters.
pub fn fleiss_kappa(votes: &AnnotationMatrix, num_classes: usize) -> Result<f64> {
    let a = votes.num_annotators;
    if a < 2 {
        return Err(Error::InvalidInput("kappa needs at least 2 annotators".into()));
    }
    if votes.is_empty() {
        return Err(Error::Empty("kappa needs at least one item".into()));
    }
    let counts = votes.counts(num_classes)?;
    let n = counts.len() as f64;
    let af = a as f64;
    let mut totals = vec![0.0; num_classes];
    let mut p_bar = 0.0;
    for row in &counts {
        let sq: f64 = row.iter().map(|&k| (k * k) as f64).sum();
        p_bar += (sq - af) / (af * (af - 1.0));
        for (t, &k) in totals.iter_mut().zip(row) {
            *t += k as f64;
        }
    }
    p_bar /= n;
    let p_e: f64 = totals.iter().map(|t| (t / (n * af)).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return if (p_bar - 1.0).abs() < 1e-12 {
            Ok(1.0)
        } else {
            Err(Error::InvalidInput("kappa undefined: chance agreement is 1".into()))
        };
    }
    Ok(((p_bar - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0))
}
