//! Forward and backward passes of the 1D convolutional classifier.
//!
//! Activations are kept channels-last (`[batch, length, channels]`) so a
//! convolution becomes one im2col copy followed by a single matrix product.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use super::params::Layout;
use super::ArchitectureSpec;
use crate::rng::Rng;
use crate::Result;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub pad_left: usize,
    /// Sequence length entering (and leaving) the convolution.
    pub len: usize,
    pub groups: usize,
    /// Length after max-pooling, when this block pools.
    pub pooled_len: Option<usize>,
    pub w_off: usize,
    pub b_off: usize,
    pub gamma_off: usize,
    pub beta_off: usize,
}

impl Block {
    fn out_len(&self) -> usize {
        self.pooled_len.unwrap_or(self.len)
    }
}

/// Compiled execution plan for an [`ArchitectureSpec`].
#[derive(Debug, Clone)]
pub struct Network {
    pub(crate) blocks: Vec<Block>,
    pub(crate) input_channels: usize,
    pub(crate) input_length: usize,
    pub(crate) num_classes: usize,
    pub(crate) features: usize,
    pub(crate) final_len: usize,
    pub(crate) pool_size: usize,
    pub(crate) pool_stride: usize,
    pub(crate) dropout: f64,
    pub(crate) dense_w_off: usize,
    pub(crate) dense_b_off: usize,
    pub(crate) layout: Arc<Layout>,
}

struct BlockTape {
    cols: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    act: Vec<f64>,
    pool_idx: Vec<u32>,
}

/// Intermediate values retained by a forward pass for backpropagation.
pub struct Tape {
    batch: usize,
    blocks: Vec<BlockTape>,
    drop_mask: Option<Vec<f64>>,
    features: Vec<f64>,
}

impl Tape {
    /// Globally pooled features `[batch, channels]` fed to the dense layer.
    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// `c = a * b` for row-major-with-strides operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers whose extents cover the strided m×k, k×n and
    // m×n views; `c` is exclusively borrowed and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Network {
    pub(crate) fn compile(arch: &ArchitectureSpec) -> Result<Self> {
        arch.validate()?;
        let filters = arch.effective_filters();
        let mut layout = Layout::builder();
        let mut blocks = Vec::with_capacity(filters.len());
        let mut cin = arch.input_channels;
        let mut len = arch.input_length;
        for (i, (&cout, &kernel)) in filters.iter().zip(&arch.kernel_sizes).enumerate() {
            let n = i + 1;
            let groups = if i == 0 { arch.first_norm_groups() } else { arch.norm_groups };
            let w_off = layout.push(format!("block{n}.conv.weight"), vec![cout, kernel, cin], true);
            let b_off = layout.push(format!("block{n}.conv.bias"), vec![cout], false);
            let gamma_off = layout.push(format!("block{n}.norm.gamma"), vec![cout], false);
            let beta_off = layout.push(format!("block{n}.norm.beta"), vec![cout], false);
            let pooled_len = arch
                .pool_after_blocks
                .contains(&n)
                .then(|| (len - arch.pool_size) / arch.pool_stride + 1);
            let block = Block {
                cin,
                cout,
                kernel,
                pad_left: (kernel - 1) / 2,
                len,
                groups,
                pooled_len,
                w_off,
                b_off,
                gamma_off,
                beta_off,
            };
            len = block.out_len();
            cin = cout;
            blocks.push(block);
        }
        let dense_w_off = layout.push("dense.weight", vec![arch.num_classes, cin], true);
        let dense_b_off = layout.push("dense.bias", vec![arch.num_classes], false);
        Ok(Self {
            blocks,
            input_channels: arch.input_channels,
            input_length: arch.input_length,
            num_classes: arch.num_classes,
            features: cin,
            final_len: len,
            pool_size: arch.pool_size,
            pool_stride: arch.pool_stride,
            dropout: arch.dropout_rate,
            dense_w_off,
            dense_b_off,
            layout: Arc::new(layout.finish()),
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_size(&self) -> usize {
        self.input_channels * self.input_length
    }

    /// Glorot-uniform kernels, zero biases, unit norm scales.
    pub(crate) fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.total()];
        let glorot = |slice: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut Rng| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
            for v in slice.iter_mut() {
                *v = dist.sample(rng);
            }
        };
        for b in &self.blocks {
            let wlen = b.cout * b.kernel * b.cin;
            glorot(&mut p[b.w_off..b.w_off + wlen], b.kernel * b.cin, b.kernel * b.cout, rng);
            p[b.gamma_off..b.gamma_off + b.cout].iter_mut().for_each(|g| *g = 1.0);
        }
        let dlen = self.num_classes * self.features;
        glorot(&mut p[self.dense_w_off..self.dense_w_off + dlen], self.features, self.num_classes, rng);
        p
    }

    /// `[B, C, L]` (canonical) to channels-last `[B, L, C]` in f64.
    pub(crate) fn to_channels_last(&self, x: &[f32], batch: usize) -> Vec<f64> {
        let (c, l) = (self.input_channels, self.input_length);
        let mut out = vec![0.0; batch * c * l];
        for b in 0..batch {
            let src = &x[b * c * l..(b + 1) * c * l];
            let dst = &mut out[b * c * l..(b + 1) * c * l];
            for ch in 0..c {
                for t in 0..l {
                    dst[t * c + ch] = src[ch * l + t] as f64;
                }
            }
        }
        out
    }

    /// Forward pass on channels-last input. Dropout is applied only when an
    /// RNG is supplied.
    pub fn forward_cl(
        &self,
        params: &[f64],
        input: Vec<f64>,
        batch: usize,
        dropout_rng: Option<&mut Rng>,
    ) -> (Vec<f64>, Tape) {
        let mut h = input;
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (next, tape) = block_forward(blk, params, &h, batch, self.pool_size, self.pool_stride);
            h = next;
            tapes.push(tape);
        }
        let drop_mask = match dropout_rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                let mask: Vec<f64> = (0..h.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                h.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                Some(mask)
            }
            _ => None,
        };
        let (lf, cf) = (self.final_len, self.features);
        let mut features = vec![0.0; batch * cf];
        for b in 0..batch {
            let f = &mut features[b * cf..(b + 1) * cf];
            for t in 0..lf {
                let row = &h[(b * lf + t) * cf..(b * lf + t + 1) * cf];
                f.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            f.iter_mut().for_each(|a| *a /= lf as f64);
        }
        let k = self.num_classes;
        let mut logits = vec![0.0; batch * k];
        let w = &params[self.dense_w_off..self.dense_w_off + k * cf];
        gemm(batch, cf, k, &features, cf as isize, 1, w, 1, cf as isize, &mut logits, 0.0);
        let bias = &params[self.dense_b_off..self.dense_b_off + k];
        for row in logits.chunks_exact_mut(k) {
            row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        }
        let tape = Tape {
            batch,
            blocks: tapes,
            drop_mask,
            features,
        };
        (logits, tape)
    }

    /// Gradient of `sum_b dlogits[b] . logits[b]` with respect to all parameters.
    pub fn backward(&self, params: &[f64], tape: &Tape, dlogits: &[f64]) -> Vec<f64> {
        let batch = tape.batch;
        let (k, cf, lf) = (self.num_classes, self.features, self.final_len);
        let mut grad = vec![0.0; params.len()];
        gemm(
            k,
            batch,
            cf,
            dlogits,
            1,
            k as isize,
            &tape.features,
            cf as isize,
            1,
            &mut grad[self.dense_w_off..self.dense_w_off + k * cf],
            0.0,
        );
        for row in dlogits.chunks_exact(k) {
            grad[self.dense_b_off..self.dense_b_off + k]
                .iter_mut()
                .zip(row)
                .for_each(|(g, d)| *g += d);
        }
        let mut dfeat = vec![0.0; batch * cf];
        let w = &params[self.dense_w_off..self.dense_w_off + k * cf];
        gemm(batch, k, cf, dlogits, k as isize, 1, w, cf as isize, 1, &mut dfeat, 0.0);
        let mut dh = vec![0.0; batch * lf * cf];
        for b in 0..batch {
            let df = &dfeat[b * cf..(b + 1) * cf];
            for t in 0..lf {
                let row = &mut dh[(b * lf + t) * cf..(b * lf + t + 1) * cf];
                row.iter_mut().zip(df).for_each(|(d, g)| *d = g / lf as f64);
            }
        }
        if let Some(mask) = &tape.drop_mask {
            dh.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        for (i, (blk, bt)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            dh = block_backward(blk, bt, params, &mut grad, dh, batch, i > 0);
        }
        grad
    }
}

fn im2col(blk: &Block, h: &[f64], batch: usize) -> Vec<f64> {
    let (cin, len, kernel) = (blk.cin, blk.len, blk.kernel);
    let width = kernel * cin;
    let mut cols = vec![0.0; batch * len * width];
    for b in 0..batch {
        for t in 0..len {
            let row = &mut cols[(b * len + t) * width..(b * len + t + 1) * width];
            for j in 0..kernel {
                let src = t as isize + j as isize - blk.pad_left as isize;
                if src >= 0 && (src as usize) < len {
                    let s = (b * len + src as usize) * cin;
                    row[j * cin..(j + 1) * cin].copy_from_slice(&h[s..s + cin]);
                }
            }
        }
    }
    cols
}

fn col2im(blk: &Block, dcols: &[f64], batch: usize) -> Vec<f64> {
    let (cin, len, kernel) = (blk.cin, blk.len, blk.kernel);
    let width = kernel * cin;
    let mut dh = vec![0.0; batch * len * cin];
    for b in 0..batch {
        for t in 0..len {
            let row = &dcols[(b * len + t) * width..(b * len + t + 1) * width];
            for j in 0..kernel {
                let src = t as isize + j as isize - blk.pad_left as isize;
                if src >= 0 && (src as usize) < len {
                    let s = (b * len + src as usize) * cin;
                    dh[s..s + cin]
                        .iter_mut()
                        .zip(&row[j * cin..(j + 1) * cin])
                        .for_each(|(d, g)| *d += g);
                }
            }
        }
    }
    dh
}

fn block_forward(
    blk: &Block,
    params: &[f64],
    h: &[f64],
    batch: usize,
    pool_size: usize,
    pool_stride: usize,
) -> (Vec<f64>, BlockTape) {
    let (len, cout) = (blk.len, blk.cout);
    let width = blk.kernel * blk.cin;
    let rows = batch * len;
    let cols = im2col(blk, h, batch);
    let w = &params[blk.w_off..blk.w_off + cout * width];
    let mut y = vec![0.0; rows * cout];
    gemm(rows, width, cout, &cols, width as isize, 1, w, 1, width as isize, &mut y, 0.0);
    let bias = &params[blk.b_off..blk.b_off + cout];
    for row in y.chunks_exact_mut(cout) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }

    // group normalization, then ELU, in place
    let gamma = &params[blk.gamma_off..blk.gamma_off + cout];
    let beta = &params[blk.beta_off..blk.beta_off + cout];
    let gs = cout / blk.groups;
    let n = (len * gs) as f64;
    let mut xhat = vec![0.0; rows * cout];
    let mut inv_std = vec![0.0; batch * blk.groups];
    for b in 0..batch {
        let ys = &mut y[b * len * cout..(b + 1) * len * cout];
        let xs = &mut xhat[b * len * cout..(b + 1) * len * cout];
        for g in 0..blk.groups {
            let (c0, c1) = (g * gs, (g + 1) * gs);
            let mut mean = 0.0;
            for t in 0..len {
                mean += ys[t * cout + c0..t * cout + c1].iter().sum::<f64>();
            }
            mean /= n;
            let mut var = 0.0;
            for t in 0..len {
                var += ys[t * cout + c0..t * cout + c1]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            var /= n;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[b * blk.groups + g] = inv;
            for t in 0..len {
                for c in c0..c1 {
                    let i = t * cout + c;
                    let xh = (ys[i] - mean) * inv;
                    xs[i] = xh;
                    let z = gamma[c] * xh + beta[c];
                    ys[i] = if z > 0.0 { z } else { z.exp_m1() };
                }
            }
        }
    }
    let act = y;

    match blk.pooled_len {
        Some(plen) => {
            let mut out = vec![0.0; batch * plen * cout];
            let mut idx = vec![0u32; batch * plen * cout];
            for b in 0..batch {
                for to in 0..plen {
                    let start = to * pool_stride;
                    for c in 0..cout {
                        let mut best = (b * len + start) * cout + c;
                        for t in start + 1..start + pool_size {
                            let i = (b * len + t) * cout + c;
                            if act[i] > act[best] {
                                best = i;
                            }
                        }
                        let o = (b * plen + to) * cout + c;
                        out[o] = act[best];
                        idx[o] = best as u32;
                    }
                }
            }
            let tape = BlockTape {
                cols,
                xhat,
                inv_std,
                act,
                pool_idx: idx,
            };
            (out, tape)
        }
        None => {
            let out = act.clone();
            let tape = BlockTape {
                cols,
                xhat,
                inv_std,
                act,
                pool_idx: Vec::new(),
            };
            (out, tape)
        }
    }
}

fn block_backward(
    blk: &Block,
    bt: &BlockTape,
    params: &[f64],
    grad: &mut [f64],
    dout: Vec<f64>,
    batch: usize,
    need_input_grad: bool,
) -> Vec<f64> {
    let (len, cout) = (blk.len, blk.cout);
    let width = blk.kernel * blk.cin;
    let rows = batch * len;
    let mut dz = if blk.pooled_len.is_some() {
        let mut d = vec![0.0; rows * cout];
        for (o, &i) in bt.pool_idx.iter().enumerate() {
            d[i as usize] += dout[o];
        }
        d
    } else {
        dout
    };
    // ELU: derivative is 1 above zero, output + 1 below
    for (d, &a) in dz.iter_mut().zip(&bt.act) {
        if a <= 0.0 {
            *d *= a + 1.0;
        }
    }

    // group normalization
    let gs = cout / blk.groups;
    let n = (len * gs) as f64;
    let gamma = &params[blk.gamma_off..blk.gamma_off + cout];
    let mut dgamma = vec![0.0; cout];
    let mut dbeta = vec![0.0; cout];
    let mut dy = vec![0.0; rows * cout];
    for b in 0..batch {
        let base = b * len * cout;
        for g in 0..blk.groups {
            let (c0, c1) = (g * gs, (g + 1) * gs);
            let inv = bt.inv_std[b * blk.groups + g];
            let (mut s1, mut s2) = (0.0, 0.0);
            for t in 0..len {
                for c in c0..c1 {
                    let i = base + t * cout + c;
                    let dxh = dz[i] * gamma[c];
                    s1 += dxh;
                    s2 += dxh * bt.xhat[i];
                    dgamma[c] += dz[i] * bt.xhat[i];
                    dbeta[c] += dz[i];
                }
            }
            for t in 0..len {
                for c in c0..c1 {
                    let i = base + t * cout + c;
                    let dxh = dz[i] * gamma[c];
                    dy[i] = inv / n * (n * dxh - s1 - bt.xhat[i] * s2);
                }
            }
        }
    }
    grad[blk.gamma_off..blk.gamma_off + cout].copy_from_slice(&dgamma);
    grad[blk.beta_off..blk.beta_off + cout].copy_from_slice(&dbeta);
    let dbias = &mut grad[blk.b_off..blk.b_off + cout];
    for row in dy.chunks_exact(cout) {
        dbias.iter_mut().zip(row).for_each(|(g, d)| *g += d);
    }
    gemm(
        cout,
        rows,
        width,
        &dy,
        1,
        cout as isize,
        &bt.cols,
        width as isize,
        1,
        &mut grad[blk.w_off..blk.w_off + cout * width],
        0.0,
    );
    if !need_input_grad {
        return Vec::new();
    }
    let w = &params[blk.w_off..blk.w_off + cout * width];
    let mut dcols = vec![0.0; rows * width];
    gemm(rows, cout, width, &dy, cout as isize, 1, w, width as isize, 1, &mut dcols, 0.0);
    col2im(blk, &dcols, batch)
}
