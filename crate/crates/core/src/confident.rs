//! Confident learning: out-of-fold probabilities, the confident joint, and
//! pruning or correcting suspected label errors.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::WindowedDataset;
use crate::matrix::Matrix;
use crate::network::{ArchitectureSpec, ModelRole, ModelState};
use crate::rng;
use crate::training::{train_model, LossSpec, TrainConfig};
use crate::{Error, Result};

const FOLD_RETRIES: u64 = 16;

/// Out-of-fold probabilities together with each example's fold.
#[derive(Debug, Clone)]
pub struct OutOfFold {
    pub probs: Matrix,
    pub folds: Vec<usize>,
}

/// Assign examples to `k` folds, dealing each class round-robin after a
/// seeded shuffle.
pub fn stratified_folds(labels: &[usize], num_classes: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::seeded(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    folds
}

fn folds_cover_classes(labels: &[usize], folds: &[usize], num_classes: usize, k: usize) -> bool {
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    (0..k).all(|f| {
        let seen: BTreeSet<usize> = labels.iter().zip(folds).filter(|(_, &g)| g != f).map(|(&y, _)| y).collect();
        seen == present && present.len() <= num_classes
    })
}

/// Train `k` models, each scoring only the fold it never saw.
pub fn oof_probabilities(arch: &ArchitectureSpec, ds: &WindowedDataset, k: usize, cfg: &TrainConfig) -> Result<OutOfFold> {
    if k < 2 || k > ds.len() {
        return Err(Error::InvalidInput(format!("{k} folds for {} examples", ds.len())));
    }
    let mut folds = None;
    for attempt in 0..FOLD_RETRIES {
        let f = stratified_folds(&ds.y, ds.num_classes, k, rng::derive(cfg.rng_seed, 100 + attempt));
        if folds_cover_classes(&ds.y, &f, ds.num_classes, k) {
            folds = Some(f);
            break;
        }
        log::debug!("fold assignment {attempt} leaves a class out of a training fold, retrying");
    }
    let folds = folds.ok_or_else(|| Error::InvalidInput("no fold assignment keeps every class in every training fold".into()))?;
    let mut probs = Matrix::zeros(ds.len(), ds.num_classes);
    for f in 0..k {
        let (held, kept): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| folds[i] == f);
        if held.is_empty() {
            continue;
        }
        let cfg = cfg.clone().with_seed(rng::derive(cfg.rng_seed, 200 + f as u64));
        let model = train_model(arch, &ds.subset(&kept), &cfg, ModelRole::Baseline, None)?.state;
        let p = model.predict_proba(&ds.subset(&held), true)?;
        for (r, &i) in held.iter().enumerate() {
            probs.row_mut(i).copy_from_slice(p.row(r));
        }
    }
    Ok(OutOfFold { probs, folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidentJoint {
    /// `counts[observed][suspected]`.
    pub counts: Vec<Vec<usize>>,
    /// Per-class thresholds; `None` for classes with no labeled examples.
    pub thresholds: Vec<Option<f64>>,
    /// Per example, the suspected true class if it passed any threshold.
    pub assignments: Vec<Option<usize>>,
}

impl ConfidentJoint {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn off_diagonal(&self) -> usize {
        self.total() - (0..self.counts.len()).map(|i| self.counts[i][i]).sum::<usize>()
    }

    /// Fraction of counted examples that land off the diagonal.
    pub fn off_diagonal_mass(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.off_diagonal() as f64 / t as f64
        }
    }
}

/// Per-class thresholds at the mean self-confidence, then count each example
/// under the most probable class among those whose threshold it reaches.
pub fn estimate_joint(probs: &Matrix, noisy: &[usize]) -> Result<ConfidentJoint> {
    if probs.rows != noisy.len() {
        return Err(Error::ShapeMismatch(format!("{} probability rows for {} labels", probs.rows, noisy.len())));
    }
    let c = probs.cols;
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (row, &y) in probs.iter_rows().zip(noisy) {
        if y >= c {
            return Err(Error::InvalidLabel { label: y as i64, num_classes: c });
        }
        sums[y] += row[y];
        counts[y] += 1;
    }
    let thresholds: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    Ok(joint_with_thresholds(probs, noisy, thresholds))
}

/// Joint counts for explicit thresholds.
pub fn joint_with_thresholds(probs: &Matrix, noisy: &[usize], thresholds: Vec<Option<f64>>) -> ConfidentJoint {
    let c = probs.cols;
    let mut joint = vec![vec![0usize; c]; c];
    let mut assignments = Vec::with_capacity(noisy.len());
    for (row, &y) in probs.iter_rows().zip(noisy) {
        let mut best: Option<usize> = None;
        for j in 0..c {
            if let Some(t) = thresholds[j] {
                if row[j] >= t && best.is_none_or(|b| row[j] > row[b]) {
                    best = Some(j);
                }
            }
        }
        if let Some(j) = best {
            joint[y][j] += 1;
        }
        assignments.push(best);
    }
    ConfidentJoint { counts: joint, thresholds, assignments }
}

/// Per off-diagonal cell (i, j), the `counts[i][j]` examples labeled `i` with
/// the largest margin `p_j - p_i`, capped at half of each observed class.
pub fn prune_indices(joint: &ConfidentJoint, probs: &Matrix, noisy: &[usize]) -> Vec<usize> {
    let c = probs.cols;
    let mut class_size = vec![0usize; c];
    for &y in noisy {
        class_size[y] += 1;
    }
    let mut pruned = BTreeSet::new();
    for i in 0..c {
        let cap = class_size[i] / 2;
        let mut taken = 0;
        for j in (0..c).filter(|&j| j != i) {
            let want = joint.counts[i][j];
            if want == 0 {
                continue;
            }
            let mut cands: Vec<usize> = (0..noisy.len())
                .filter(|&n| noisy[n] == i && !pruned.contains(&n))
                .collect();
            let margin = |n: usize| probs.row(n)[j] - probs.row(n)[i];
            cands.sort_by(|&a, &b| margin(b).total_cmp(&margin(a)).then(a.cmp(&b)));
            for n in cands.into_iter().take(want.min(cap - taken)) {
                pruned.insert(n);
                taken += 1;
            }
            if taken >= cap {
                break;
            }
        }
    }
    pruned.into_iter().collect()
}

/// Audit record of a pruning pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneAudit {
    pub joint: ConfidentJoint,
    pub pruned: Vec<usize>,
}

pub struct PruneOutcome {
    pub cleaned: WindowedDataset,
    pub kept: Vec<usize>,
    pub audit: PruneAudit,
    pub state: ModelState,
}

fn plain_ce(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        loss: LossSpec::Ce,
        smoothing_alpha: 0.0,
        ..cfg.clone()
    }
}

/// Drop suspected errors and retrain with plain cross-entropy.
pub fn prune_and_retrain(
    arch: &ArchitectureSpec,
    ds: &WindowedDataset,
    joint: &ConfidentJoint,
    probs: &Matrix,
    cfg: &TrainConfig,
) -> Result<PruneOutcome> {
    let pruned = prune_indices(joint, probs, &ds.y);
    let drop: BTreeSet<usize> = pruned.iter().copied().collect();
    let kept: Vec<usize> = (0..ds.len()).filter(|i| !drop.contains(i)).collect();
    let cleaned = ds.subset(&kept);
    let state = train_model(arch, &cleaned, &plain_ce(cfg), ModelRole::Baseline, None)?.state;
    Ok(PruneOutcome {
        cleaned,
        kept,
        audit: PruneAudit { joint: joint.clone(), pruned },
        state,
    })
}

/// Indices most likely mislabeled, ranked by how far the best other class
/// beats the observed one.
pub fn rank_suspects(probs: &Matrix, noisy: &[usize]) -> Vec<usize> {
    let score = |n: usize| {
        let row = probs.row(n);
        let best_other = (0..row.len()).filter(|&j| j != noisy[n]).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        best_other - row[noisy[n]]
    };
    let mut order: Vec<usize> = (0..noisy.len()).collect();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    order
}

/// Fixed-budget correction: replace the labels of the `budget` top suspects
/// with clean ones and retrain on the full set.
pub fn correct_and_retrain(
    arch: &ArchitectureSpec,
    ds: &WindowedDataset,
    probs: &Matrix,
    clean: &[usize],
    budget: usize,
    cfg: &TrainConfig,
) -> Result<(Vec<usize>, ModelState)> {
    if clean.len() != ds.len() {
        return Err(Error::ShapeMismatch("clean labels do not cover the dataset".into()));
    }
    let mut chosen: Vec<usize> = rank_suspects(probs, &ds.y).into_iter().take(budget).collect();
    chosen.sort_unstable();
    let mut y = ds.y.clone();
    for &i in &chosen {
        y[i] = clean[i];
    }
    let state = train_model(arch, &ds.with_labels(y)?, &plain_ce(cfg), ModelRole::Baseline, None)?.state;
    Ok((chosen, state))
}

/// Fraction of `pruned` that were truly corrupted.
pub fn pruning_precision(pruned: &[usize], flipped: &[bool]) -> f64 {
    if pruned.is_empty() {
        return 0.0;
    }
    pruned.iter().filter(|&&i| flipped[i]).count() as f64 / pruned.len() as f64
}

/// Suspected-label histogram, for reports.
pub fn suspected_counts(joint: &ConfidentJoint) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for a in joint.assignments.iter().flatten() {
        *m.entry(*a).or_insert(0) += 1;
    }
    m
}
