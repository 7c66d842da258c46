//! Classification losses on raw logits with soft targets, each paired with
//! its analytic gradient with respect to the logits.

use serde::{Deserialize, Serialize};

use crate::matrix::{log_softmax, Matrix};
use crate::{Error, Result};

/// Loss function and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Ce,
    /// Cross-entropy against targets smoothed towards uniform.
    Ls {
        #[serde(default = "defaults::ls_alpha")]
        alpha: f64,
    },
    /// Cross-entropy on mixup batches; `a` parameterizes Beta(a, a).
    Mixup {
        #[serde(default = "defaults::mixup_a")]
        a: f64,
    },
    /// Poly-1: cross-entropy plus `epsilon * (1 - p_t)`.
    Poly {
        #[serde(default = "defaults::poly_epsilon")]
        epsilon: f64,
    },
    BiTempered {
        #[serde(default = "defaults::t1")]
        t1: f64,
        #[serde(default = "defaults::t2")]
        t2: f64,
    },
    /// Cross-entropy on logits rescaled to norm at most `tau`.
    LogitClip {
        #[serde(default = "defaults::tau")]
        tau: f64,
    },
    Focal {
        #[serde(default = "defaults::gamma")]
        gamma: f64,
    },
}

mod defaults {
    pub fn ls_alpha() -> f64 {
        0.1
    }
    pub fn mixup_a() -> f64 {
        0.2
    }
    pub fn poly_epsilon() -> f64 {
        1.0
    }
    pub fn t1() -> f64 {
        0.7
    }
    pub fn t2() -> f64 {
        1.3
    }
    pub fn tau() -> f64 {
        1.0
    }
    pub fn gamma() -> f64 {
        2.0
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Ce
    }
}

impl LossSpec {
    pub fn ls() -> Self {
        LossSpec::Ls { alpha: defaults::ls_alpha() }
    }
    pub fn mixup() -> Self {
        LossSpec::Mixup { a: defaults::mixup_a() }
    }
    pub fn poly() -> Self {
        LossSpec::Poly { epsilon: defaults::poly_epsilon() }
    }
    pub fn bi_tempered() -> Self {
        LossSpec::BiTempered { t1: defaults::t1(), t2: defaults::t2() }
    }
    pub fn logit_clip() -> Self {
        LossSpec::LogitClip { tau: defaults::tau() }
    }
    pub fn focal() -> Self {
        LossSpec::Focal { gamma: defaults::gamma() }
    }

    /// Short table label.
    pub fn label(&self) -> &'static str {
        match self {
            LossSpec::Ce => "CE",
            LossSpec::Ls { .. } => "LS",
            LossSpec::Mixup { .. } => "Mixup",
            LossSpec::Poly { .. } => "PL",
            LossSpec::BiTempered { .. } => "Bi-T",
            LossSpec::LogitClip { .. } => "LC",
            LossSpec::Focal { .. } => "FL",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LossSpec::Ce => true,
            LossSpec::Ls { alpha } => (0.0..=1.0).contains(&alpha),
            LossSpec::Mixup { a } => a > 0.0,
            LossSpec::Poly { epsilon } => epsilon.is_finite(),
            LossSpec::BiTempered { t1, t2 } => {
                (0.0..=1.0).contains(&t1) && t2 >= 1.0 && t2.is_finite() && t1 <= t2
            }
            LossSpec::LogitClip { tau } => tau > 0.0,
            LossSpec::Focal { gamma } => gamma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("loss parameters out of range: {self:?}")))
        }
    }

    /// Per-example loss and `d loss / d logits`.
    pub fn row(&self, logits: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        match *self {
            LossSpec::Ce | LossSpec::Mixup { .. } => soft_ce(logits, target, grad),
            LossSpec::Ls { alpha } => {
                let c = target.len() as f64;
                let smoothed: Vec<f64> = target.iter().map(|t| (1.0 - alpha) * t + alpha / c).collect();
                soft_ce(logits, &smoothed, grad)
            }
            LossSpec::Poly { epsilon } => poly(logits, target, epsilon, grad),
            LossSpec::Focal { gamma } => focal(logits, target, gamma, grad),
            LossSpec::BiTempered { t1, t2 } => bi_tempered(logits, target, t1, t2, grad),
            LossSpec::LogitClip { tau } => logit_clip(logits, target, tau, grad),
        }
    }
}

/// Mean loss over the batch and its gradient (already divided by batch size).
pub fn loss_and_grad(spec: &LossSpec, logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.rows != targets.rows || logits.cols != targets.cols {
        return Err(Error::ShapeMismatch(format!(
            "logits {}x{} vs targets {}x{}",
            logits.rows, logits.cols, targets.rows, targets.cols
        )));
    }
    if logits.data.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN logits".into()));
    }
    if logits.rows == 0 {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for i in 0..logits.rows {
        total += spec.row(logits.row(i), targets.row(i), grad.row_mut(i));
    }
    let n = logits.rows as f64;
    grad.data.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Mean loss over the batch.
pub fn compute_loss(spec: &LossSpec, logits: &Matrix, targets: &Matrix) -> Result<f64> {
    loss_and_grad(spec, logits, targets).map(|(l, _)| l)
}

fn soft_ce(z: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
    let logp = log_softmax(z);
    let ysum: f64 = y.iter().sum();
    let mut loss = 0.0;
    for j in 0..z.len() {
        if y[j] != 0.0 {
            loss -= y[j] * logp[j];
        }
        grad[j] = logp[j].exp() * ysum - y[j];
    }
    loss
}

fn poly(z: &[f64], y: &[f64], epsilon: f64, grad: &mut [f64]) -> f64 {
    let ce = soft_ce(z, y, grad);
    let p: Vec<f64> = log_softmax(z).into_iter().map(f64::exp).collect();
    let pt: f64 = y.iter().zip(&p).map(|(a, b)| a * b).sum();
    for j in 0..z.len() {
        grad[j] -= epsilon * p[j] * (y[j] - pt);
    }
    ce + epsilon * (1.0 - pt)
}

fn focal(z: &[f64], y: &[f64], gamma: f64, grad: &mut [f64]) -> f64 {
    let logp = log_softmax(z);
    let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    let mut loss = 0.0;
    // h_c = p_c * dL/dp_c
    let mut h = vec![0.0; z.len()];
    for c in 0..z.len() {
        if y[c] == 0.0 {
            continue;
        }
        let q = (1.0 - p[c]).max(0.0);
        let w = q.powf(gamma);
        loss -= y[c] * w * logp[c];
        let dw = if q > 0.0 { gamma * q.powf(gamma - 1.0) } else { 0.0 };
        h[c] = -y[c] * (-dw * p[c] * logp[c] + w);
    }
    let hsum: f64 = h.iter().sum();
    for j in 0..z.len() {
        grad[j] = h[j] - p[j] * hsum;
    }
    loss
}

fn log_t(x: f64, t: f64) -> f64 {
    if (t - 1.0).abs() < 1e-12 {
        x.ln()
    } else {
        (x.powf(1.0 - t) - 1.0) / (1.0 - t)
    }
}

fn exp_t(x: f64, t: f64) -> f64 {
    if (t - 1.0).abs() < 1e-12 {
        x.exp()
    } else {
        (1.0 + (1.0 - t) * x).max(0.0).powf(1.0 / (1.0 - t))
    }
}

/// Tempered softmax: `exp_t(z - lambda)` with `lambda` chosen so the outputs
/// sum to one (found by bisection; the sum is decreasing in `lambda`).
pub(crate) fn tempered_softmax(z: &[f64], t: f64) -> Vec<f64> {
    if (t - 1.0).abs() < 1e-12 {
        return log_softmax(z).into_iter().map(f64::exp).collect();
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total = |lambda: f64| z.iter().map(|&v| exp_t(v - lambda, t)).sum::<f64>();
    let mut lo = max;
    let mut hi = max + 1.0;
    while total(hi) > 1.0 {
        hi = max + (hi - max) * 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let p: Vec<f64> = z.iter().map(|&v| exp_t(v - lambda, t)).collect();
    let s: f64 = p.iter().sum();
    p.into_iter().map(|v| v / s).collect()
}

fn bi_tempered(z: &[f64], y: &[f64], t1: f64, t2: f64, grad: &mut [f64]) -> f64 {
    let p = tempered_softmax(z, t2);
    let mut loss = 0.0;
    let two = 2.0 - t1;
    for c in 0..z.len() {
        let yl = if y[c] > 0.0 { y[c] * log_t(y[c], t1) } else { 0.0 };
        loss += yl - y[c] * log_t(p[c], t1) - (y[c].powf(two) - p[c].powf(two)) / two;
    }
    // dL/dp_c = -y_c p_c^{-t1} + p_c^{1-t1};  dp_i/dz_j = p_i^{t2} (delta_ij - w_j)
    let pt2: Vec<f64> = p.iter().map(|v| v.powf(t2)).collect();
    let s: f64 = pt2.iter().sum();
    let h: Vec<f64> = (0..z.len())
        .map(|c| {
            let g = if y[c] > 0.0 { -y[c] * p[c].powf(-t1) } else { 0.0 } + p[c].powf(1.0 - t1);
            g * pt2[c]
        })
        .collect();
    let hsum: f64 = h.iter().sum();
    for j in 0..z.len() {
        grad[j] = h[j] - pt2[j] / s * hsum;
    }
    loss
}

fn logit_clip(z: &[f64], y: &[f64], tau: f64, grad: &mut [f64]) -> f64 {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= tau {
        return soft_ce(z, y, grad);
    }
    let scale = tau / norm;
    let clipped: Vec<f64> = z.iter().map(|v| v * scale).collect();
    let mut g = vec![0.0; z.len()];
    let loss = soft_ce(&clipped, y, &mut g);
    let zg: f64 = z.iter().zip(&g).map(|(a, b)| a * b).sum();
    for j in 0..z.len() {
        grad[j] = scale * (g[j] - z[j] * zg / (norm * norm));
    }
    loss
}
