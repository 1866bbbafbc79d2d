//! Forward kernels and their adjoints.
//!
//! Each differentiable operation comes as a pair: `op` computes the value,
//! `op_backward` maps an upstream gradient (same shape as the output) to the
//! gradient of each input. The [`Tape`](crate::autograd::Tape) strings these
//! together; they are also usable directly on plain tensors.

use std::ops::Range;

use crate::anchors::Anchor;
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Shape, Tensor};

pub fn crop_spatial<T: Scalar>(t: &Tensor<T>, a: Anchor) -> Result<Tensor<T>> {
    let s = t.shape();
    a.check_within(s.h, s.w)?;
    let out = Shape::new(s.n, s.c, a.height(), a.width())?;
    let src = t.data();
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for y in a.y1..a.y2 {
                let row = s.offset(n, c, y, 0);
                data.extend_from_slice(&src[row + a.x1..row + a.x2]);
            }
        }
    }
    Tensor::new(out, data)
}

/// Scatters the crop gradient back into a zero tensor of the input shape.
pub fn crop_spatial_backward<T: Scalar>(grad_out: &[T], input: Shape, a: Anchor) -> Vec<T> {
    let mut g = vec![T::zero(); input.numel()];
    let cw = a.width();
    let mut src = grad_out.chunks_exact(cw);
    for n in 0..input.n {
        for c in 0..input.c {
            for y in a.y1..a.y2 {
                let row = input.offset(n, c, y, 0);
                let chunk = src.next().expect("crop gradient length");
                g[row + a.x1..row + a.x2].copy_from_slice(chunk);
            }
        }
    }
    g
}

fn check_channel_range(s: Shape, lo: usize, hi: usize) -> Result<()> {
    if lo >= hi {
        return Err(Error::bounds(format!("channel range [{lo}, {hi}) is empty")));
    }
    if hi > s.c {
        return Err(Error::bounds(format!("channel range [{lo}, {hi}) exceeds {} channels", s.c)));
    }
    Ok(())
}

pub fn slice_channels<T: Scalar>(t: &Tensor<T>, lo: usize, hi: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    check_channel_range(s, lo, hi)?;
    let out = Shape::new(s.n, hi - lo, s.h, s.w)?;
    let plane = s.plane();
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..s.n {
        let start = s.offset(n, lo, 0, 0);
        data.extend_from_slice(&t.data()[start..start + (hi - lo) * plane]);
    }
    Tensor::new(out, data)
}

pub fn slice_channels_backward<T: Scalar>(grad_out: &[T], input: Shape, lo: usize, hi: usize) -> Vec<T> {
    let mut g = vec![T::zero(); input.numel()];
    let block = (hi - lo) * input.plane();
    for n in 0..input.n {
        let start = input.offset(n, lo, 0, 0);
        g[start..start + block].copy_from_slice(&grad_out[n * block..(n + 1) * block]);
    }
    g
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels needs at least one part"))?
        .shape();
    for p in parts.iter().skip(1) {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(format!(
                "concat_channels: part {s} does not match {first} in batch or spatial dims"
            )));
        }
    }
    let total_c = parts.iter().map(|p| p.shape().c).sum();
    let out = Shape::new(first.n, total_c, first.h, first.w)?;
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.sample(n));
        }
    }
    Tensor::new(out, data)
}

/// Splits the concatenated gradient into per-part gradients.
pub fn concat_channels_backward<T: Scalar>(grad_out: &[T], parts: &[Shape]) -> Vec<Vec<T>> {
    let mut grads: Vec<Vec<T>> = parts.iter().map(|s| Vec::with_capacity(s.numel())).collect();
    let mut offset = 0;
    for _ in 0..parts[0].n {
        for (g, s) in grads.iter_mut().zip(parts) {
            let len = s.sample_len();
            g.extend_from_slice(&grad_out[offset..offset + len]);
            offset += len;
        }
    }
    grads
}

/// Half-open input windows `[floor(i*len/out), ceil((i+1)*len/out))` for each output index.
pub fn pool_windows(len: usize, out: usize) -> Vec<Range<usize>> {
    (0..out)
        .map(|i| {
            let start = i * len / out;
            let end = ((i + 1) * len).div_ceil(out);
            start..end
        })
        .collect()
}

pub fn adaptive_avg_pool<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("adaptive_avg_pool output size must be >= 1"));
    }
    if out_h > s.h || out_w > s.w {
        return Err(Error::shape(format!(
            "adaptive_avg_pool output {out_h}x{out_w} larger than input {}x{}",
            s.h, s.w
        )));
    }
    let out = Shape::new(s.n, s.c, out_h, out_w)?;
    let rows = pool_windows(s.h, out_h);
    let cols = pool_windows(s.w, out_w);
    let src = t.data();
    let mut data = Vec::with_capacity(out.numel());
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for r in &rows {
            for cw in &cols {
                let mut acc = T::zero();
                for y in r.clone() {
                    for &v in &src[base + y * s.w + cw.start..base + y * s.w + cw.end] {
                        acc += v;
                    }
                }
                data.push(acc / T::from_usize_exact(r.len() * cw.len()));
            }
        }
    }
    Tensor::new(out, data)
}

pub fn adaptive_avg_pool_backward<T: Scalar>(grad_out: &[T], input: Shape, out_h: usize, out_w: usize) -> Vec<T> {
    let rows = pool_windows(input.h, out_h);
    let cols = pool_windows(input.w, out_w);
    let mut g = vec![T::zero(); input.numel()];
    let mut it = grad_out.iter();
    for nc in 0..input.n * input.c {
        let base = nc * input.plane();
        for r in &rows {
            for cw in &cols {
                let share = *it.next().expect("pool gradient length") / T::from_usize_exact(r.len() * cw.len());
                for y in r.clone() {
                    for v in &mut g[base + y * input.w + cw.start..base + y * input.w + cw.end] {
                        *v += share;
                    }
                }
            }
        }
    }
    g
}

pub fn global_avg_pool<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let plane = s.plane();
    let denom = T::from_usize_exact(plane);
    let data = t
        .data()
        .chunks_exact(plane)
        .map(|ch| ch.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::new(Shape { h: 1, w: 1, ..s }, data).expect("pooled shape")
}

pub fn global_avg_pool_backward<T: Scalar>(grad_out: &[T], input: Shape) -> Vec<T> {
    let plane = input.plane();
    let denom = T::from_usize_exact(plane);
    let mut g = Vec::with_capacity(input.numel());
    for &go in grad_out {
        g.extend(std::iter::repeat_n(go / denom, plane));
    }
    g
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("add: {} vs {}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn relu<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward output was positive.
pub fn relu_backward<T: Scalar>(grad_out: &[T], output: &[T]) -> Vec<T> {
    grad_out
        .iter()
        .zip(output)
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect()
}

/// Geometry of a square-kernel convolution with "same" padding `k / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn same(in_c: usize, out_c: usize, kernel: usize, stride: usize, h: usize, w: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) || kernel == 0 {
            return Err(Error::config(format!("kernel size {kernel} must be odd")));
        }
        if stride == 0 {
            return Err(Error::config("stride must be >= 1"));
        }
        let pad = kernel / 2;
        Ok(ConvGeom {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            h,
            w,
            out_h: (h + 2 * pad - kernel) / stride + 1,
            out_w: (w + 2 * pad - kernel) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unrolls one sample into a `(in_c*k*k, out_h*out_w)` row-major matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.out_plane();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let dst = &mut cols[row * p..(row + 1) * p];
                let mut i = 0;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst[i..i + g.out_w].fill(T::zero());
                        i += g.out_w;
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[i] = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                        i += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.out_plane();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let src = &cols[row * p..(row + 1) * p];
                let mut i = 0;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        i += g.out_w;
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[i];
                        }
                        i += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Output of [`conv2d`]: the value plus the unrolled inputs reused by the adjoint.
pub struct ConvOutput<T> {
    pub value: Tensor<T>,
    pub geom: ConvGeom,
    pub cols: Vec<T>,
}

/// Same-padded 2-D convolution; `weight` is `(out_c, in_c, k, k)`, `bias` has `out_c` entries.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<ConvOutput<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    if ws.h != ws.w {
        return Err(Error::shape(format!("conv weight {ws} must have a square kernel")));
    }
    if ws.c != xs.c {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got input {xs}",
            ws.c
        )));
    }
    if bias.shape().numel() != ws.n {
        return Err(Error::shape(format!("conv bias {} does not match {} filters", bias.shape(), ws.n)));
    }
    let g = ConvGeom::same(xs.c, ws.n, ws.h, stride, xs.h, xs.w)?;
    let k_len = g.patch_len();
    let p = g.out_plane();
    let out_shape = Shape::new(xs.n, g.out_c, g.out_h, g.out_w)?;
    let mut out = vec![T::zero(); out_shape.numel()];
    let mut cols = vec![T::zero(); xs.n * k_len * p];
    let w_mat = MatRef::row_major(weight.data(), g.out_c, k_len);
    for n in 0..xs.n {
        let cols_n = &mut cols[n * k_len * p..(n + 1) * k_len * p];
        im2col(x.sample(n), &g, cols_n);
        let out_n = &mut out[n * g.out_c * p..(n + 1) * g.out_c * p];
        for (co, chunk) in out_n.chunks_exact_mut(p).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        gemm(T::one(), w_mat, MatRef::row_major(cols_n, k_len, p), T::one(), out_n);
    }
    Ok(ConvOutput {
        value: Tensor::new(out_shape, out)?,
        geom: g,
        cols,
    })
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Adjoint of [`conv2d`]. `cols` are the unrolled inputs from the forward pass.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &[T],
    geom: &ConvGeom,
    batch: usize,
    cols: &[T],
    weight: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let k_len = geom.patch_len();
    let p = geom.out_plane();
    let mut gw = vec![T::zero(); geom.out_c * k_len];
    let mut gb = vec![T::zero(); geom.out_c];
    let mut gx = need_input.then(|| vec![T::zero(); batch * geom.in_c * geom.h * geom.w]);
    let mut dcols = vec![T::zero(); if need_input { k_len * p } else { 0 }];
    let w_mat = MatRef::row_major(weight, geom.out_c, k_len);
    for n in 0..batch {
        let go = &grad_out[n * geom.out_c * p..(n + 1) * geom.out_c * p];
        let go_mat = MatRef::row_major(go, geom.out_c, p);
        let cols_n = MatRef::row_major(&cols[n * k_len * p..(n + 1) * k_len * p], k_len, p);
        gemm(T::one(), go_mat, cols_n.t(), T::one(), &mut gw);
        for (b, ch) in gb.iter_mut().zip(go.chunks_exact(p)) {
            *b += ch.iter().copied().sum::<T>();
        }
        if let Some(gx) = gx.as_mut() {
            gemm(T::one(), w_mat.t(), go_mat, T::zero(), &mut dcols);
            let plane = geom.in_c * geom.h * geom.w;
            col2im(&dcols, geom, &mut gx[n * plane..(n + 1) * plane]);
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

/// `y = W x + b` per batch entry; `x` is flattened per sample, `weight` is
/// `(out, in)` stored as any tensor with `out*in` elements.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, out_features: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    let in_features = xs.sample_len();
    if weight.shape().numel() != out_features * in_features {
        return Err(Error::shape(format!(
            "linear layer expects {} input features, got input {xs}",
            weight.shape().numel() / out_features.max(1)
        )));
    }
    if bias.shape().numel() != out_features {
        return Err(Error::shape(format!("linear bias {} does not match {out_features} outputs", bias.shape())));
    }
    let mut out = Vec::with_capacity(xs.n * out_features);
    for _ in 0..xs.n {
        out.extend_from_slice(bias.data());
    }
    gemm(
        T::one(),
        MatRef::row_major(x.data(), xs.n, in_features),
        MatRef::row_major(weight.data(), out_features, in_features).t(),
        T::one(),
        &mut out,
    );
    Tensor::new(Shape::vector(xs.n, out_features)?, out)
}

pub struct LinearGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    grad_out: &[T],
    x: &Tensor<T>,
    weight: &[T],
    out_features: usize,
    need_input: bool,
) -> LinearGrads<T> {
    let n = x.shape().n;
    let in_features = x.shape().sample_len();
    let go = MatRef::row_major(grad_out, n, out_features);
    let mut gw = vec![T::zero(); out_features * in_features];
    gemm(T::one(), go.t(), MatRef::row_major(x.data(), n, in_features), T::zero(), &mut gw);
    let mut gb = vec![T::zero(); out_features];
    for row in grad_out.chunks_exact(out_features) {
        gb.iter_mut().zip(row).for_each(|(b, &g)| *b += g);
    }
    let input = need_input.then(|| {
        let mut gx = vec![T::zero(); n * in_features];
        gemm(T::one(), go, MatRef::row_major(weight, out_features, in_features), T::zero(), &mut gx);
        gx
    });
    LinearGrads {
        input,
        weight: gw,
        bias: gb,
    }
}

/// Row-wise softmax over the per-sample flattened values.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let s = logits.shape();
    let k = s.sample_len();
    let mut data = Vec::with_capacity(s.numel());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = data.len();
        let mut total = T::zero();
        for &z in row {
            let e = (z - max).exp();
            total += e;
            data.push(e);
        }
        for v in &mut data[start..] {
            *v /= total;
        }
    }
    Tensor::new(s, data).expect("softmax shape")
}

/// Mean cross-entropy of `logits` `(n, classes, 1, 1)` against integer labels.
///
/// Returns `(loss, probabilities)`. Uses a max-shifted log-sum-exp.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    if labels.len() != s.n {
        return Err(Error::shape(format!("{} labels for logits {s}", labels.len())));
    }
    let classes = s.sample_len();
    let mut loss = T::zero();
    for (row, &y) in logits.data().chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::Domain(format!("label {y} out of range for {classes} classes")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[y];
    }
    Ok((loss / T::from_usize_exact(s.n), softmax(logits)))
}

/// Gradient of the mean cross-entropy with respect to the logits.
pub fn softmax_cross_entropy_backward<T: Scalar>(upstream: T, probs: &Tensor<T>, labels: &[usize]) -> Vec<T> {
    let classes = probs.shape().sample_len();
    let scale = upstream / T::from_usize_exact(labels.len());
    let mut g: Vec<T> = probs.data().iter().map(|&p| p * scale).collect();
    for (i, &y) in labels.iter().enumerate() {
        g[i * classes + y] -= scale;
    }
    g
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
