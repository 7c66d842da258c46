//! Class-conditional label noise.
//!
//! A [`NoiseMatrix`] is column-stochastic: column `j` is the distribution of
//! the observed label given true class `j`. Matrices are built from a
//! [`NoiseSpec`] (level + sparsity) and applied with [`corrupt_labels`].

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

const COLUMN_TOL: f64 = 1e-9;
const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub num_classes: usize,
    /// Noise level: expected fraction of flipped labels.
    pub level: f64,
    /// Noise sparsity: 0 spreads the noise mass over every other class,
    /// 1 concentrates it on a single target per class.
    pub sparsity: f64,
    pub mode: NoiseMode,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn symmetric(num_classes: usize, level: f64, sparsity: f64, rng_seed: u64) -> Self {
        Self {
            num_classes,
            level,
            sparsity,
            mode: NoiseMode::Symmetric,
            rng_seed,
        }
    }

    pub fn asymmetric(num_classes: usize, level: f64, rng_seed: u64) -> Self {
        Self {
            num_classes,
            level,
            sparsity: 1.0,
            mode: NoiseMode::Asymmetric,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "noise model needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.level) {
            return Err(Error::InvalidSpec(format!("noise level {} not in [0, 1]", self.level)));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::InvalidSpec(format!(
                "noise sparsity {} not in [0, 1]",
                self.sparsity
            )));
        }
        Ok(())
    }

    /// Number of nonzero off-diagonal entries per column.
    pub fn off_diagonal_support(&self) -> usize {
        match self.mode {
            NoiseMode::Asymmetric => 1,
            NoiseMode::Symmetric => {
                let k = ((1.0 - self.sparsity) * (self.num_classes - 1) as f64).round() as usize;
                k.max(1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMatrix {
    pub num_classes: usize,
    /// Row-major `C x C`; entry `(i, j)` is `p(observed = i | true = j)`.
    pub entries: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<NoiseSpec>,
}

impl NoiseMatrix {
    pub fn identity(num_classes: usize) -> Self {
        let mut entries = vec![0.0; num_classes * num_classes];
        for i in 0..num_classes {
            entries[i * num_classes + i] = 1.0;
        }
        Self {
            num_classes,
            entries,
            spec: None,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidMatrix("noise matrix must be square".into()));
        }
        let m = Self {
            num_classes: c,
            entries: rows.concat(),
            spec: None,
        };
        m.validate()?;
        Ok(m)
    }

    #[inline]
    pub fn get(&self, observed: usize, truth: usize) -> f64 {
        self.entries[observed * self.num_classes + truth]
    }

    fn set(&mut self, observed: usize, truth: usize, v: f64) {
        self.entries[observed * self.num_classes + truth] = v;
    }

    pub fn column(&self, truth: usize) -> Vec<f64> {
        (0..self.num_classes).map(|i| self.get(i, truth)).collect()
    }

    /// Checks nonnegativity and that every column sums to one.
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c == 0 || self.entries.len() != c * c {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for {c} classes, got {}",
                c * c,
                self.entries.len()
            )));
        }
        for j in 0..c {
            let mut sum = 0.0;
            for i in 0..c {
                let v = self.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidMatrix(format!("entry ({i}, {j}) = {v}")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > COLUMN_TOL {
                return Err(Error::InvalidMatrix(format!("column {j} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// Build the noise matrix described by `spec`.
pub fn build_noise_matrix(spec: &NoiseSpec) -> Result<NoiseMatrix> {
    spec.validate()?;
    let c = spec.num_classes;
    let mut q = NoiseMatrix::identity(c);
    q.spec = Some(spec.clone());
    if spec.level == 0.0 {
        return Ok(q);
    }
    for j in 0..c {
        q.set(j, j, 1.0 - spec.level);
    }
    let mut rng = rng::seeded(spec.rng_seed);
    match spec.mode {
        NoiseMode::Symmetric => {
            let k = spec.off_diagonal_support();
            let share = spec.level / k as f64;
            for j in 0..c {
                let others: Vec<usize> = (0..c).filter(|&i| i != j).collect();
                for pick in index::sample(&mut rng, others.len(), k) {
                    q.set(others[pick], j, share);
                }
            }
        }
        NoiseMode::Asymmetric => {
            let target = pairing_derangement(c, &mut rng);
            for (j, &t) in target.iter().enumerate() {
                q.set(t, j, spec.level);
            }
        }
    }
    Ok(q)
}

/// Seeded fixed-point-free permutation made of 2-cycles, closed with one
/// 3-cycle when `c` is odd. `result[j]` is the class that `j` flips to.
fn pairing_derangement(c: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(rng);
    let mut target = vec![0; c];
    let paired = if c % 2 == 1 { c - 3 } else { c };
    for pair in order[..paired].chunks(2) {
        target[pair[0]] = pair[1];
        target[pair[1]] = pair[0];
    }
    if c % 2 == 1 {
        let (a, b, d) = (order[c - 3], order[c - 2], order[c - 1]);
        target[a] = b;
        target[b] = d;
        target[d] = a;
    }
    target
}

/// `1 - mean(diag(Q))`.
pub fn measured_level(q: &NoiseMatrix) -> Result<f64> {
    q.validate()?;
    let c = q.num_classes;
    let diag: f64 = (0..c).map(|i| q.get(i, i)).sum();
    Ok(1.0 - diag / c as f64)
}

/// Fraction of off-diagonal entries that are zero.
pub fn measured_sparsity(q: &NoiseMatrix) -> Result<f64> {
    q.validate()?;
    let c = q.num_classes;
    if c < 2 {
        return Err(Error::InvalidMatrix("sparsity needs at least 2 classes".into()));
    }
    let zeros = (0..c)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && q.get(i, j).abs() <= ZERO_TOL)
        .count();
    Ok(zeros as f64 / (c * (c - 1)) as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub original_labels: Vec<usize>,
    pub noisy_labels: Vec<usize>,
    pub flipped_mask: Vec<bool>,
    pub rng_seed: u64,
}

impl CorruptionRecord {
    pub fn flip_rate(&self) -> f64 {
        if self.flipped_mask.is_empty() {
            return 0.0;
        }
        self.flipped_mask.iter().filter(|&&f| f).count() as f64 / self.flipped_mask.len() as f64
    }
}

/// Resample every label independently from its column of `q`.
pub fn corrupt_labels(labels: &[usize], q: &NoiseMatrix, seed: u64) -> Result<CorruptionRecord> {
    q.validate()?;
    let c = q.num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidLabel {
            label: bad as i64,
            num_classes: c,
        });
    }
    let mut rng = rng::seeded(seed);
    let noisy: Vec<usize> = labels
        .iter()
        .map(|&truth| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            for i in 0..c {
                let p = q.get(i, truth);
                acc += p;
                if p > 0.0 {
                    pick = Some(i);
                    if u < acc {
                        break;
                    }
                }
            }
            // rounding can leave u just above the final cumulative sum
            pick.unwrap_or(truth)
        })
        .collect();
    let flipped_mask = labels.iter().zip(&noisy).map(|(a, b)| a != b).collect();
    Ok(CorruptionRecord {
        original_labels: labels.to_vec(),
        noisy_labels: noisy,
        flipped_mask,
        rng_seed: seed,
    })
}
