//! Forward kernels and vector-Jacobian products for every op kind.
//!
//! All reductions run in ascending index order so results are bit-reproducible.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Smallest argument passed to `ln` inside the weighted cross entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Input or parameter placed on the tape by the caller.
    Leaf,
    Add,
    Sub,
    Mul,
    /// Multiply by a constant.
    Scale(f64),
    /// `[s, x]` with `s` of shape `[1]`: `s * x`.
    ScalarMul,
    /// `[a, b]` with shapes `[m, k]` and `[k, n]`.
    MatMul,
    Transpose,
    /// Softmax along the last axis of a rank-2 tensor.
    RowSoftmax,
    Sigmoid,
    Tanh,
    Relu,
    /// `[H, W, C] -> [C]`.
    GlobalAvgPool,
    /// `[x, g]` with `x: [H, W, C]`, `g: [C]`: scales every channel of `x`.
    ChannelMul,
    /// Concatenates `[H, W, C_k]` inputs along the channel axis.
    ConcatChannels,
    Reshape(Vec<usize>),
    /// `[x, w]` or `[x, w, b]` with `x: [H, W, Ci]`, `w: [k, k, Ci, Co]`,
    /// `b: [Co]`. Zero padding of `k / 2` on every side.
    Conv2d { stride: usize },
    /// Sum of all elements, shape `[1]`.
    Sum,
    /// Class-balanced binary cross entropy of a prediction against a fixed
    /// binary target, summed over elements. Shape `[1]`.
    WeightedBce { target: Tensor, eta: f64 },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scalar_scale",
            Op::ScalarMul => "scalar_mul",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::RowSoftmax => "row_softmax",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::ChannelMul => "channel_broadcast_mul",
            Op::ConcatChannels => "concat_channels",
            Op::Reshape(_) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Sum => "sum",
            Op::WeightedBce { .. } => "weighted_bce",
        }
    }
}

fn arity(op: &Op, inputs: &[&Tensor], expected: std::ops::RangeInclusive<usize>) -> Result<()> {
    if expected.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(Error::shape(
            op.name(),
            format!("expected {expected:?} inputs, got {}", inputs.len()),
        ))
    }
}

fn same_shape(op: &Op, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(
            op.name(),
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ))
    }
}

fn require_rank(op: &Op, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() == rank {
        Ok(())
    } else {
        Err(Error::shape(
            op.name(),
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ))
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv_out_dim(input: usize, k: usize, stride: usize) -> usize {
    (input + 2 * (k / 2) - k) / stride + 1
}

struct ConvGeom {
    h: usize,
    w: usize,
    ci: usize,
    k: usize,
    co: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn conv_geometry(op: &Op, x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Result<ConvGeom> {
    require_rank(op, x, 3)?;
    require_rank(op, w, 4)?;
    let (h, wd, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, k2, wci, co) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if k != k2 || k % 2 == 0 {
        return Err(Error::shape(op.name(), format!("kernel must be square and odd, got {:?}", w.shape())));
    }
    if wci != ci {
        return Err(Error::shape(
            op.name(),
            format!("input has {ci} channels, kernel expects {wci}"),
        ));
    }
    if stride == 0 {
        return Err(Error::shape(op.name(), "stride must be positive"));
    }
    if let Some(b) = b {
        if b.shape() != [co] {
            return Err(Error::shape(op.name(), format!("bias {:?} for {co} outputs", b.shape())));
        }
    }
    Ok(ConvGeom {
        h,
        w: wd,
        ci,
        k,
        co,
        oh: conv_out_dim(h, k, stride),
        ow: conv_out_dim(wd, k, stride),
        stride,
        pad: k / 2,
    })
}

impl ConvGeom {
    /// 1x1 kernel at stride 1: a plain `(HW x Ci) (Ci x Co)` product.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Input coordinate for output `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + t) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < limit).then_some(p as usize)
    }
}

fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: &ConvGeom) -> Tensor {
    if g.is_pointwise() {
        let mut out = gemm(g.h * g.w, g.ci, g.co, x.data(), false, w.data(), false);
        if let Some(b) = b {
            for px in out.chunks_mut(g.co) {
                for (o, &bv) in px.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        return Tensor::from_parts(vec![g.oh, g.ow, g.co], out);
    }
    let mut out = vec![0.0; g.oh * g.ow * g.co];
    let (xd, wdat) = (x.data(), w.data());
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o_off = (oy * g.ow + ox) * g.co;
            let acc = &mut out[o_off..o_off + g.co];
            if let Some(b) = b {
                acc.copy_from_slice(b.data());
            }
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let x_off = (iy * g.w + ix) * g.ci;
                    let w_off = (ky * g.k + kx) * g.ci * g.co;
                    for c in 0..g.ci {
                        let xv = xd[x_off + c];
                        let wrow = &wdat[w_off + c * g.co..w_off + (c + 1) * g.co];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![g.oh, g.ow, g.co], out)
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &ConvGeom,
    grad: &Tensor,
    want_x: bool,
    want_w: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    if g.is_pointwise() {
        let n = g.h * g.w;
        let dx = want_x.then(|| Tensor::from_parts(x.shape().to_vec(), gemm(n, g.co, g.ci, grad.data(), false, w.data(), true)));
        let dw = want_w.then(|| Tensor::from_parts(w.shape().to_vec(), gemm(g.ci, n, g.co, x.data(), true, grad.data(), false)));
        return (dx, dw);
    }
    let mut dx = want_x.then(|| vec![0.0; x.len()]);
    let mut dw = want_w.then(|| vec![0.0; w.len()]);
    let (xd, gd) = (x.data(), grad.data());
    // Kernel with the channel axes swapped, [k, k, co, ci], so both input
    // and weight gradients accumulate along contiguous rows.
    let wt = want_x.then(|| {
        let mut t = vec![0.0; w.len()];
        for tap in 0..g.k * g.k {
            let base = tap * g.ci * g.co;
            for c in 0..g.ci {
                for o in 0..g.co {
                    t[base + o * g.ci + c] = w.data()[base + c * g.co + o];
                }
            }
        }
        t
    });
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o_off = (oy * g.ow + ox) * g.co;
            let gout = &gd[o_off..o_off + g.co];
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let x_off = (iy * g.w + ix) * g.ci;
                    let w_off = (ky * g.k + kx) * g.ci * g.co;
                    if let (Some(dx), Some(wt)) = (dx.as_mut(), wt.as_ref()) {
                        let drow = &mut dx[x_off..x_off + g.ci];
                        for (o, &gv) in gout.iter().enumerate() {
                            let wrow = &wt[w_off + o * g.ci..w_off + (o + 1) * g.ci];
                            for (d, &wv) in drow.iter_mut().zip(wrow) {
                                *d += gv * wv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        for c in 0..g.ci {
                            let xv = xd[x_off + c];
                            let row = &mut dw[w_off + c * g.co..w_off + (c + 1) * g.co];
                            for (d, &gv) in row.iter_mut().zip(gout) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        dw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
    )
}

/// `e^x` for `x <= 0`, written without branches so the softmax loop
/// vectorises. Relative error is within a couple of ulp of `f64::exp`.
#[inline(always)]
fn exp_nonpos(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let xc = x.max(-708.0);
    // Adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let t = xc * std::f64::consts::LOG2_E + SHIFT;
    let n = t - SHIFT;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    // Taylor series to degree 12 on |r| <= ln2 / 2.
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    if x < -708.0 {
        0.0
    } else {
        p * scale
    }
}

/// `op(A) op(B)` for row-major `A` and `B`, where `op` optionally transposes.
/// `m x k` times `k x n` after the transposes.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe exactly the `m x k`, `k x n` and `m x n`
    // row-major buffers checked above.
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
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

fn matmul_forward(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm(m, k, n, a, false, b, false)
}

fn transpose2(t: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = t[r * cols + c];
        }
    }
    out
}

fn weighted_bce_value(pred: &Tensor, target: &Tensor, eta: f64) -> f64 {
    let mut total = 0.0;
    for (&p, &s) in pred.data().iter().zip(target.data()) {
        let fg = (1.0 - eta) * s * p.max(LOG_CLAMP).ln();
        let bg = eta * (1.0 - s) * (1.0 - p).max(LOG_CLAMP).ln();
        total -= fg + bg;
    }
    total
}

/// Evaluates `op` on concrete inputs.
pub fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    let out = match op {
        Op::Leaf => return Err(Error::Tape("leaf records cannot be evaluated".into())),
        Op::Add | Op::Sub | Op::Mul => {
            arity(op, inputs, 2..=2)?;
            let (a, b) = (inputs[0], inputs[1]);
            same_shape(op, a, b)?;
            match op {
                Op::Add => zip(a, b, |x, y| x + y),
                Op::Sub => zip(a, b, |x, y| x - y),
                _ => zip(a, b, |x, y| x * y),
            }
        }
        Op::Scale(c) => {
            arity(op, inputs, 1..=1)?;
            let c = *c;
            map(inputs[0], |x| x * c)
        }
        Op::ScalarMul => {
            arity(op, inputs, 2..=2)?;
            if inputs[0].shape() != [1] {
                return Err(Error::shape(op.name(), format!("scale must be [1], got {:?}", inputs[0].shape())));
            }
            let s = inputs[0].item();
            map(inputs[1], |x| s * x)
        }
        Op::MatMul => {
            arity(op, inputs, 2..=2)?;
            let (a, b) = (inputs[0], inputs[1]);
            require_rank(op, a, 2)?;
            require_rank(op, b, 2)?;
            let (m, k, k2, n) = (a.shape()[0], a.shape()[1], b.shape()[0], b.shape()[1]);
            if k != k2 {
                return Err(Error::shape(op.name(), format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            Tensor::from_parts(vec![m, n], matmul_forward(a.data(), b.data(), m, k, n))
        }
        Op::Transpose => {
            arity(op, inputs, 1..=1)?;
            let a = inputs[0];
            require_rank(op, a, 2)?;
            let (r, c) = (a.shape()[0], a.shape()[1]);
            Tensor::from_parts(vec![c, r], transpose2(a.data(), r, c))
        }
        Op::RowSoftmax => {
            arity(op, inputs, 1..=1)?;
            let a = inputs[0];
            require_rank(op, a, 2)?;
            let cols = a.shape()[1];
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(cols) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for v in row.iter_mut() {
                    *v = exp_nonpos(*v - max);
                }
                let sum: f64 = row.iter().sum();
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        }
        Op::Sigmoid => {
            arity(op, inputs, 1..=1)?;
            map(inputs[0], sigmoid)
        }
        Op::Tanh => {
            arity(op, inputs, 1..=1)?;
            map(inputs[0], f64::tanh)
        }
        Op::Relu => {
            arity(op, inputs, 1..=1)?;
            map(inputs[0], |x| if x > 0.0 { x } else { 0.0 })
        }
        Op::GlobalAvgPool => {
            arity(op, inputs, 1..=1)?;
            let a = inputs[0];
            require_rank(op, a, 3)?;
            let c = a.shape()[2];
            let positions = a.shape()[0] * a.shape()[1];
            let mut out = vec![0.0; c];
            for px in a.data().chunks(c) {
                for (o, &v) in out.iter_mut().zip(px) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= positions as f64;
            }
            Tensor::from_parts(vec![c], out)
        }
        Op::ChannelMul => {
            arity(op, inputs, 2..=2)?;
            let (x, g) = (inputs[0], inputs[1]);
            require_rank(op, x, 3)?;
            if g.shape() != [x.shape()[2]] {
                return Err(Error::shape(op.name(), format!("{:?} gated by {:?}", x.shape(), g.shape())));
            }
            let mut out = x.data().to_vec();
            for px in out.chunks_mut(g.len()) {
                for (v, &gv) in px.iter_mut().zip(g.data()) {
                    *v *= gv;
                }
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        }
        Op::ConcatChannels => {
            if inputs.is_empty() {
                return Err(Error::shape(op.name(), "no inputs"));
            }
            for t in inputs {
                require_rank(op, t, 3)?;
                if t.shape()[..2] != inputs[0].shape()[..2] {
                    return Err(Error::shape(
                        op.name(),
                        format!("spatial dims {:?} vs {:?}", t.shape(), inputs[0].shape()),
                    ));
                }
            }
            let (h, w) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let total: usize = inputs.iter().map(|t| t.shape()[2]).sum();
            let mut out = Vec::with_capacity(h * w * total);
            for p in 0..h * w {
                for t in inputs {
                    let c = t.shape()[2];
                    out.extend_from_slice(&t.data()[p * c..(p + 1) * c]);
                }
            }
            Tensor::from_parts(vec![h, w, total], out)
        }
        Op::Reshape(shape) => {
            arity(op, inputs, 1..=1)?;
            inputs[0].clone().reshape(shape)?
        }
        Op::Conv2d { stride } => {
            arity(op, inputs, 2..=3)?;
            let b = inputs.get(2).copied();
            let g = conv_geometry(op, inputs[0], inputs[1], b, *stride)?;
            conv2d_forward(inputs[0], inputs[1], b, &g)
        }
        Op::Sum => {
            arity(op, inputs, 1..=1)?;
            Tensor::scalar(inputs[0].data().iter().sum())
        }
        Op::WeightedBce { target, eta } => {
            arity(op, inputs, 1..=1)?;
            same_shape(op, inputs[0], target)?;
            Tensor::scalar(weighted_bce_value(inputs[0], target, *eta))
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { op: op.name() });
    }
    Ok(out)
}

/// Vector-Jacobian product: gradients for each input given the output
/// gradient. Entries for inputs with `wanted[i] == false` are `None`.
pub fn backward(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    grad: &Tensor,
    wanted: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let want = |i: usize| wanted.get(i).copied().unwrap_or(false);
    let grads = match op {
        Op::Leaf => vec![],
        Op::Add => vec![want(0).then(|| grad.clone()), want(1).then(|| grad.clone())],
        Op::Sub => vec![want(0).then(|| grad.clone()), want(1).then(|| map(grad, |g| -g))],
        Op::Mul => vec![
            want(0).then(|| zip(grad, inputs[1], |g, b| g * b)),
            want(1).then(|| zip(grad, inputs[0], |g, a| g * a)),
        ],
        Op::Scale(c) => {
            let c = *c;
            vec![want(0).then(|| map(grad, |g| g * c))]
        }
        Op::ScalarMul => {
            let s = inputs[0].item();
            vec![
                want(0).then(|| {
                    Tensor::scalar(grad.data().iter().zip(inputs[1].data()).map(|(g, x)| g * x).sum())
                }),
                want(1).then(|| map(grad, |g| g * s)),
            ]
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = want(0).then(|| Tensor::from_parts(vec![m, k], gemm(m, n, k, grad.data(), false, b.data(), true)));
            let db = want(1).then(|| Tensor::from_parts(vec![k, n], gemm(k, m, n, a.data(), true, grad.data(), false)));
            vec![da, db]
        }
        Op::Transpose => {
            let (r, c) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            vec![want(0).then(|| Tensor::from_parts(vec![r, c], transpose2(grad.data(), c, r)))]
        }
        Op::RowSoftmax => {
            let cols = output.shape()[1];
            let mut out = vec![0.0; output.len()];
            for ((o, y), g) in out
                .chunks_mut(cols)
                .zip(output.data().chunks(cols))
                .zip(grad.data().chunks(cols))
            {
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                for ((ov, &yv), &gv) in o.iter_mut().zip(y).zip(g) {
                    *ov = yv * (gv - dot);
                }
            }
            vec![want(0).then(|| Tensor::from_parts(output.shape().to_vec(), out))]
        }
        Op::Sigmoid => vec![want(0).then(|| zip(grad, output, |g, y| g * y * (1.0 - y)))],
        Op::Tanh => vec![want(0).then(|| zip(grad, output, |g, y| g * (1.0 - y * y)))],
        Op::Relu => vec![want(0).then(|| zip(grad, inputs[0], |g, x| if x > 0.0 { g } else { 0.0 }))],
        Op::GlobalAvgPool => {
            let x = inputs[0];
            let c = x.shape()[2];
            let inv = 1.0 / (x.shape()[0] * x.shape()[1]) as f64;
            vec![want(0).then(|| {
                let mut out = vec![0.0; x.len()];
                for px in out.chunks_mut(c) {
                    for (o, &g) in px.iter_mut().zip(grad.data()) {
                        *o = g * inv;
                    }
                }
                Tensor::from_parts(x.shape().to_vec(), out)
            })]
        }
        Op::ChannelMul => {
            let (x, gate) = (inputs[0], inputs[1]);
            let c = gate.len();
            let dx = want(0).then(|| {
                let mut out = grad.data().to_vec();
                for px in out.chunks_mut(c) {
                    for (v, &gv) in px.iter_mut().zip(gate.data()) {
                        *v *= gv;
                    }
                }
                Tensor::from_parts(x.shape().to_vec(), out)
            });
            let dg = want(1).then(|| {
                let mut out = vec![0.0; c];
                for (gp, xp) in grad.data().chunks(c).zip(x.data().chunks(c)) {
                    for ((o, &g), &xv) in out.iter_mut().zip(gp).zip(xp) {
                        *o += g * xv;
                    }
                }
                Tensor::from_parts(vec![c], out)
            });
            vec![dx, dg]
        }
        Op::ConcatChannels => {
            let total = output.shape()[2];
            let positions = output.shape()[0] * output.shape()[1];
            let mut start = 0;
            let mut out = Vec::with_capacity(inputs.len());
            for (i, t) in inputs.iter().enumerate() {
                let c = t.shape()[2];
                if want(i) {
                    let mut d = Vec::with_capacity(t.len());
                    for p in 0..positions {
                        d.extend_from_slice(&grad.data()[p * total + start..p * total + start + c]);
                    }
                    out.push(Some(Tensor::from_parts(t.shape().to_vec(), d)));
                } else {
                    out.push(None);
                }
                start += c;
            }
            out
        }
        Op::Reshape(_) => vec![want(0).then(|| {
            Tensor::from_parts(inputs[0].shape().to_vec(), grad.data().to_vec())
        })],
        Op::Conv2d { stride } => {
            let b = inputs.get(2).copied();
            let geom = conv_geometry(op, inputs[0], inputs[1], b, *stride)?;
            let (dx, dw) = conv2d_backward(inputs[0], inputs[1], &geom, grad, want(0), want(1));
            let mut out = vec![dx, dw];
            if b.is_some() {
                out.push(want(2).then(|| {
                    let mut db = vec![0.0; geom.co];
                    for px in grad.data().chunks(geom.co) {
                        for (d, &g) in db.iter_mut().zip(px) {
                            *d += g;
                        }
                    }
                    Tensor::from_parts(vec![geom.co], db)
                }));
            }
            out
        }
        Op::Sum => {
            let g = grad.item();
            vec![want(0).then(|| Tensor::full(inputs[0].shape(), g))]
        }
        Op::WeightedBce { target, eta } => {
            let g = grad.item();
            let eta = *eta;
            vec![want(0).then(|| {
                zip(inputs[0], target, |p, s| {
                    let mut d = 0.0;
                    if p > LOG_CLAMP {
                        d -= (1.0 - eta) * s / p;
                    }
                    if 1.0 - p > LOG_CLAMP {
                        d += eta * (1.0 - s) / (1.0 - p);
                    }
                    g * d
                })
            })]
        }
    };
    Ok(grads)
}
