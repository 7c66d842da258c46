//! Central finite-difference check of the training objective gradient.

use fhlr::matrix::Matrix;
use fhlr::network::{build_model, ArchitectureSpec, ModelState};
use fhlr::rng;
use fhlr::training::{loss_and_grad, smooth_targets, LossSpec};
use rand::seq::index;
use rand::Rng as _;

/// Soft-target cross-entropy plus the L2 penalty, evaluated without dropout.
fn objective(state: &ModelState, params: &[f64], x: &[f32], targets: &Matrix, l2: f64) -> f64 {
    let net = state.network();
    let batch = targets.rows;
    let input = channels_last(x, state.arch.input_channels, state.arch.input_length, batch);
    let (logits, _) = net.forward_cl(params, input, batch, None);
    let logits = Matrix::from_vec(batch, targets.cols, logits);
    let (loss, _) = loss_and_grad(&LossSpec::Ce, &logits, targets).unwrap();
    let mask = state.layout().decay_mask();
    let penalty: f64 = params.iter().zip(&mask).filter(|(_, &d)| d).map(|(w, _)| w * w).sum();
    loss + l2 * penalty
}

fn channels_last(x: &[f32], c: usize, l: usize, batch: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for ch in 0..c {
            for t in 0..l {
                out[b * c * l + t * c + ch] = x[b * c * l + ch * l + t] as f64;
            }
        }
    }
    out
}

fn analytic(state: &ModelState, params: &[f64], x: &[f32], targets: &Matrix, l2: f64) -> Vec<f64> {
    let net = state.network();
    let batch = targets.rows;
    let input = channels_last(x, state.arch.input_channels, state.arch.input_length, batch);
    let (logits, tape) = net.forward_cl(params, input, batch, None);
    let logits = Matrix::from_vec(batch, targets.cols, logits);
    let (_, dlogits) = loss_and_grad(&LossSpec::Ce, &logits, targets).unwrap();
    let mut grad = net.backward(params, &tape, &dlogits.data);
    let mask = state.layout().decay_mask();
    for ((g, w), d) in grad.iter_mut().zip(params).zip(mask) {
        if d {
            *g += 2.0 * l2 * w;
        }
    }
    grad
}

/// Worst relative error between backprop and central differences over
/// `checked` randomly chosen parameters.
pub fn max_relative_error(arch: &ArchitectureSpec, seed: u64, checked: usize) -> (f64, usize) {
    let state = build_model(arch, seed).unwrap();
    let mut r = rng::seeded(seed + 100);
    let batch = 4;
    let x: Vec<f32> = (0..batch * arch.input_channels * arch.input_length)
        .map(|_| r.random_range(-2.0f32..2.0))
        .collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % arch.num_classes).collect();
    let targets = smooth_targets(&labels, 0.05, arch.num_classes).unwrap();
    // move away from init so biases and norm offsets are nonzero
    let mut params = state.params.values().to_vec();
    for p in params.iter_mut() {
        *p += r.random_range(-0.05..0.05);
    }
    let l2 = 1e-4;
    let grad = analytic(&state, &params, &x, &targets, l2);
    let picks = index::sample(&mut r, params.len(), checked);
    let mut worst: f64 = 0.0;
    for i in picks {
        let h = 1e-6;
        let mut plus = params.clone();
        plus[i] += h;
        let mut minus = params.clone();
        minus[i] -= h;
        let fd = (objective(&state, &plus, &x, &targets, l2) - objective(&state, &minus, &x, &targets, l2)) / (2.0 * h);
        let denom = fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max((fd - grad[i]).abs() / denom);
    }
    (worst, checked)
}

