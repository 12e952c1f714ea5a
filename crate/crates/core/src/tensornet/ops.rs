//! Layer kernels with their gradient transforms.
//!
//! Convolution rounds output sizes down; max pooling rounds up and clamps the
//! last window to the input edge. Together these reproduce the SingleChar-IFN
//! shape table exactly.

use rand::Rng;

use super::{Real, Shape, Tensor};
use crate::{Error, Result};

/// Zero padding per side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Padding {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Padding {
    pub const fn uniform(p: usize) -> Self {
        Self {
            top: p,
            left: p,
            bottom: p,
            right: p,
        }
    }

    /// Same-size padding for an even kernel: the extra row/column goes to the
    /// bottom/right.
    pub const fn same(kernel: usize) -> Self {
        let before = (kernel - 1) / 2;
        let after = kernel - 1 - before;
        Self {
            top: before,
            left: before,
            bottom: after,
            right: after,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.top == self.left && self.left == self.bottom && self.bottom == self.right
    }
}

/// `floor((len + pads - kernel) / stride) + 1`, or an error when the window
/// does not fit.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, pad_before: usize, pad_after: usize) -> Result<usize> {
    let padded = len + pad_before + pad_after;
    if stride == 0 || kernel == 0 || padded < kernel {
        return Err(Error::Shape(format!(
            "conv window {kernel} (stride {stride}) does not fit length {len} padded to {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// `ceil((len + 2·pad - kernel) / stride) + 1`, dropping a last window that
/// would start inside the padding.
pub fn pool_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return Err(Error::Shape(format!(
            "pool window {kernel} (stride {stride}) does not fit length {len} with pad {pad}"
        )));
    }
    let mut out = (padded - kernel).div_ceil(stride) + 1;
    if pad > 0 && (out - 1) * stride >= len + pad {
        out -= 1;
    }
    Ok(out)
}

/// Convolution weights `[ky][kx][c_in][c_out]` and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: Padding,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients mirroring one [`ConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: Padding) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: vec![T::zero(); kernel * kernel * in_channels * out_channels],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    #[inline]
    pub fn weight_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kernel + kx) * self.in_channels + ci) * self.out_channels + co
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {input}",
                self.in_channels
            )));
        }
        let h = conv_output_len(input.h, self.kernel, self.stride, self.pad.top, self.pad.bottom)?;
        let w = conv_output_len(input.w, self.kernel, self.stride, self.pad.left, self.pad.right)?;
        Ok(Shape::new(h, w, self.out_channels))
    }

    pub fn zero_grads(&self) -> ConvGrads<T> {
        ConvGrads {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }
}

impl<T: Real> ConvGrads<T> {
    pub fn fill_zero(&mut self) {
        self.weight.iter_mut().for_each(|v| *v = T::zero());
        self.bias.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// `c = op(a)·op(b) + beta·c` for row-major operands, where `op(a)` is
/// `m × k` (stored `k × m` when `a_t`) and `op(b)` is `k × n` (stored `n × k`
/// when `b_t`).
#[allow(clippy::too_many_arguments)]
fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "matmul operand sizes");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assert bounds every index reachable from these strides, and
    // `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Kernel taps `kx0..kx1` of output position `o` that land inside `0..len`,
/// with the input coordinate of `kx0`. Consecutive taps hit consecutive inputs.
#[inline(always)]
fn tap_range(o: usize, stride: usize, k: usize, pad: usize, len: usize) -> (usize, usize, usize) {
    let start = o * stride;
    let kx0 = pad.saturating_sub(start).min(k);
    let kx1 = (len + pad).saturating_sub(start).min(k).max(kx0);
    (kx0, kx1, (start + kx0).saturating_sub(pad))
}

fn is_pointwise<T>(p: &ConvParams<T>) -> bool {
    p.kernel == 1 && p.stride == 1 && p.pad == Padding::default()
}

/// One row per output pixel holding its `[ky][kx][c_in]` window, zeros where
/// the window leaves the input.
fn im2col<T: Real>(input: &Tensor<T>, p: &ConvParams<T>, oshape: Shape) -> Vec<T> {
    let ishape = input.shape();
    let (cin, k) = (p.in_channels, p.kernel);
    let row = k * k * cin;
    let src = input.data();
    let mut cols = vec![T::zero(); oshape.h * oshape.w * row];
    for oy in 0..oshape.h {
        let (ky0, ky1, iy0) = tap_range(oy, p.stride, k, p.pad.top, ishape.h);
        for ox in 0..oshape.w {
            let (kx0, kx1, ix0) = tap_range(ox, p.stride, k, p.pad.left, ishape.w);
            let run = (kx1 - kx0) * cin;
            if run == 0 {
                continue;
            }
            let dst = &mut cols[(oy * oshape.w + ox) * row..][..row];
            for (dy, ky) in (ky0..ky1).enumerate() {
                let s = ((iy0 + dy) * ishape.w + ix0) * cin;
                dst[(ky * k + kx0) * cin..][..run].copy_from_slice(&src[s..s + run]);
            }
        }
    }
    cols
}

/// Scatter-adds window rows back onto the input they were gathered from.
fn col2im<T: Real>(cols: &[T], p: &ConvParams<T>, ishape: Shape, oshape: Shape) -> Vec<T> {
    let (cin, k) = (p.in_channels, p.kernel);
    let row = k * k * cin;
    let mut out = vec![T::zero(); ishape.len()];
    for oy in 0..oshape.h {
        let (ky0, ky1, iy0) = tap_range(oy, p.stride, k, p.pad.top, ishape.h);
        for ox in 0..oshape.w {
            let (kx0, kx1, ix0) = tap_range(ox, p.stride, k, p.pad.left, ishape.w);
            let run = (kx1 - kx0) * cin;
            if run == 0 {
                continue;
            }
            let srcrow = &cols[(oy * oshape.w + ox) * row..][..row];
            for (dy, ky) in (ky0..ky1).enumerate() {
                let d = ((iy0 + dy) * ishape.w + ix0) * cin;
                for (o, &v) in out[d..d + run].iter_mut().zip(&srcrow[(ky * k + kx0) * cin..][..run]) {
                    *o += v;
                }
            }
        }
    }
    out
}

/// Affine convolution (no activation). CCCP layers are the `kernel = 1` case.
pub fn conv2d<T: Real>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let oshape = p.output_shape(input.shape())?;
    let (npix, cout) = (oshape.h * oshape.w, p.out_channels);
    let mut out: Vec<T> = Vec::with_capacity(oshape.len());
    for _ in 0..npix {
        out.extend_from_slice(&p.bias);
    }
    let row = p.fan_in();
    if is_pointwise(p) {
        matmul(npix, row, cout, input.data(), false, &p.weight, false, T::one(), &mut out);
    } else {
        let cols = im2col(input, p, oshape);
        matmul(npix, row, cout, &cols, false, &p.weight, false, T::one(), &mut out);
    }
    Tensor::new(oshape, out)
}

/// Accumulates parameter gradients into `grads` and returns the input
/// gradient when `need_input` is set.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
    grads: &mut ConvGrads<T>,
    need_input: bool,
) -> Option<Tensor<T>> {
    let ishape = input.shape();
    let oshape = grad_out.shape();
    let (npix, cout, row) = (oshape.h * oshape.w, p.out_channels, p.fan_in());
    let g = grad_out.data();

    for gp in g.chunks_exact(cout) {
        for (b, &v) in grads.bias.iter_mut().zip(gp) {
            *b += v;
        }
    }
    let pointwise = is_pointwise(p);
    let cols_owned;
    let cols: &[T] = if pointwise {
        input.data()
    } else {
        cols_owned = im2col(input, p, oshape);
        &cols_owned
    };
    matmul(row, npix, cout, cols, true, g, false, T::one(), &mut grads.weight);
    if !need_input {
        return None;
    }
    let mut gcols = vec![T::zero(); npix * row];
    matmul(npix, cout, row, g, false, &p.weight, true, T::zero(), &mut gcols);
    let gin = if pointwise { gcols } else { col2im(&gcols, p, ishape, oshape) };
    Some(Tensor::new(ishape, gin).expect("input gradient shape"))
}

/// Max pooling window geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolParams {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolParams {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        Ok(Shape::new(
            pool_output_len(input.h, self.kernel, self.stride, self.pad)?,
            pool_output_len(input.w, self.kernel, self.stride, self.pad)?,
            input.c,
        ))
    }

    /// Input range covered by output position `o` along an axis of `len`.
    pub fn window(&self, o: usize, len: usize) -> std::ops::Range<usize> {
        let start = (o * self.stride).saturating_sub(self.pad);
        let end = (o * self.stride + self.kernel).saturating_sub(self.pad).min(len);
        start..end
    }
}

/// Channel-wise max; also returns the flat input index of each maximum.
pub fn maxpool<T: Real>(input: &Tensor<T>, p: PoolParams) -> Result<(Tensor<T>, Vec<u32>)> {
    let ishape = input.shape();
    let oshape = p.output_shape(ishape)?;
    let c = ishape.c;
    let src = input.data();
    let mut out = vec![T::neg_infinity(); oshape.len()];
    let mut arg = vec![0u32; oshape.len()];
    for oy in 0..oshape.h {
        let rows = p.window(oy, ishape.h);
        for ox in 0..oshape.w {
            let cols = p.window(ox, ishape.w);
            let o = (oy * oshape.w + ox) * c;
            for iy in rows.clone() {
                for ix in cols.clone() {
                    let i = (iy * ishape.w + ix) * c;
                    for ch in 0..c {
                        if src[i + ch] > out[o + ch] {
                            out[o + ch] = src[i + ch];
                            arg[o + ch] = (i + ch) as u32;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(oshape, out)?, arg))
}

pub fn maxpool_backward<T: Real>(input_shape: Shape, argmax: &[u32], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gin = Tensor::zeros(input_shape);
    let d = gin.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i as usize] += g;
    }
    gin
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(output.shape(), data).expect("relu gradient shape")
}

/// Stacks inputs along the channel axis, in order.
pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Empty("concat_channels needs at least one input".into()))?
        .shape();
    if let Some(bad) = inputs.iter().find(|t| t.shape().h != first.h || t.shape().w != first.w) {
        return Err(Error::Shape(format!(
            "cannot concatenate {} with {}",
            first,
            bad.shape()
        )));
    }
    let c: usize = inputs.iter().map(|t| t.shape().c).sum();
    let mut out = Vec::with_capacity(first.h * first.w * c);
    for pos in 0..first.h * first.w {
        for t in inputs {
            let tc = t.shape().c;
            out.extend_from_slice(&t.data()[pos * tc..(pos + 1) * tc]);
        }
    }
    Tensor::new(Shape::new(first.h, first.w, c), out)
}

/// Inverse of [`concat_channels`].
pub fn split_channels<T: Real>(input: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let s = input.shape();
    debug_assert_eq!(widths.iter().sum::<usize>(), s.c);
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(s.h * s.w * w)).collect();
    for px in input.data().chunks_exact(s.c) {
        let mut off = 0;
        for (part, &w) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&px[off..off + w]);
            off += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::new(Shape::new(s.h, s.w, w), d).expect("split shape"))
        .collect()
}

/// Mean of each channel map, giving `1 × 1 × C`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let mut sums = vec![T::zero(); s.c];
    for px in input.data().chunks_exact(s.c) {
        for (a, &v) in sums.iter_mut().zip(px) {
            *a += v;
        }
    }
    let n = T::from_f64((s.h * s.w) as f64);
    Tensor::new(Shape::new(1, 1, s.c), sums.into_iter().map(|v| v / n).collect()).expect("gap shape")
}

pub fn global_avg_pool_backward<T: Real>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let n = T::from_f64((input_shape.h * input_shape.w) as f64);
    let g: Vec<T> = grad_out.data().iter().map(|&v| v / n).collect();
    let mut data = Vec::with_capacity(input_shape.len());
    for _ in 0..input_shape.h * input_shape.w {
        data.extend_from_slice(&g);
    }
    Tensor::new(input_shape, data).expect("gap gradient shape")
}

/// Inverted dropout. Returns the output and, in training mode, the per-element
/// multiplier (0 or `1 / (1 - rate)`).
pub fn dropout<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: Option<&mut R>,
) -> (Tensor<T>, Option<Vec<T>>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = T::from_f64(1.0 / (1.0 - rate));
            let mask: Vec<T> = (0..input.data().len())
                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect();
            let data = input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (Tensor::new(input.shape(), data).expect("dropout shape"), Some(mask))
        }
        _ => (input.clone(), None),
    }
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, grad_out: &Tensor<T>) -> Tensor<T> {
    match mask {
        Some(mask) => {
            let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
            Tensor::new(grad_out.shape(), data).expect("dropout gradient shape")
        }
        None => grad_out.clone(),
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// `softmax - onehot`.
pub fn softmax_xent<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    assert!(label < logits.len(), "label {label} out of range for {} classes", logits.len());
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - log_z).exp()).collect();
    grad[label] -= T::one();
    (loss, grad)
}
