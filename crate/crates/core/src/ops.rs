//! Forward and backward kernels for the fixed layer set.
//!
//! All convolutions are 3×3 with stride 1 and zero padding 1, lowered to GEMM
//! through an im2col buffer. The transposed convolution is the exact adjoint
//! of [`conv2d`] for the same geometry.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor, Trans};

const K: usize = 3;
const KK: usize = K * K;

/// Unfold `C×H×W` into a `(C·9)×(H·W)` patch matrix (zero padding 1).
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * KK * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((ch * KK) + ky * K + kx) * hw..][..hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into `C×H×W`.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut x = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((ch * KK) + ky * K + kx) * hw..][..hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * w..(oy + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d = *d + s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T], hw: usize) {
    for (plane, &b) in y.chunks_mut(hw).zip(bias) {
        plane.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn channel_sums<T: Scalar>(dy: &[T], hw: usize) -> Vec<T> {
    dy.chunks(hw).map(|p| p.iter().copied().sum()).collect()
}

fn check_kernel<T: Scalar>(op: &'static str, kernels: &Tensor<T>) -> Result<(usize, usize)> {
    match kernels.shape()[..] {
        [a, b, 3, 3] => Ok((a, b)),
        _ => Err(Error::shape(op, "kernel A×B×3×3", kernels.shape())),
    }
}

/// Gradients of a convolution with respect to input, kernels and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Above this many `C·O` channel pairs the im2col + GEMM path is faster.
const DIRECT_MAX_PAIRS: usize = 512;

/// Zero-padded copy, `(H+2)×(W+2)` per channel.
fn pad1<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ph, pw) = (h + 2, w + 2);
    let mut p = vec![T::zero(); c * ph * pw];
    for ch in 0..c {
        for iy in 0..h {
            p[ch * ph * pw + (iy + 1) * pw + 1..][..w]
                .copy_from_slice(&x[(ch * h + iy) * w..][..w]);
        }
    }
    p
}

/// Kernel gradient of [`conv3x3_direct`], laid out `O×C×3×3`.
fn conv3x3_weight_grad_direct<T: Scalar>(
    x: &[T],
    dy: &[T],
    c: usize,
    o: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    const L: usize = 8;
    let (ph, pw) = (h + 2, w + 2);
    let p = pad1(x, c, h, w);
    let mut dk = vec![T::zero(); o * c * KK];
    let full = w / L * L;
    for oc in 0..o {
        for ch in 0..c {
            let mut acc = [[T::zero(); L]; KK];
            let mut tail = [T::zero(); KK];
            for oy in 0..h {
                let g = &dy[(oc * h + oy) * w..][..w];
                let base = ch * ph * pw + oy * pw;
                let taps: [&[T]; KK] =
                    std::array::from_fn(|t| &p[base + (t / K) * pw + t % K..][..w]);
                for (a, tap) in acc.iter_mut().zip(&taps) {
                    for (gq, tq) in g[..full].chunks_exact(L).zip(tap[..full].chunks_exact(L)) {
                        for l in 0..L {
                            a[l] = a[l] + gq[l] * tq[l];
                        }
                    }
                }
                for i in full..w {
                    for t in 0..KK {
                        tail[t] = tail[t] + g[i] * taps[t][i];
                    }
                }
            }
            for t in 0..KK {
                dk[(oc * c + ch) * KK + t] = acc[t].iter().copied().sum::<T>() + tail[t];
            }
        }
    }
    dk
}

/// Row-wise direct 3×3 correlation, `k` laid out `O×C×3×3`, accumulated into
/// `y` (`O×H×W`, already holding the bias).
fn conv3x3_direct<T: Scalar>(
    x: &[T],
    k: &[T],
    y: &mut [T],
    c: usize,
    o: usize,
    h: usize,
    w: usize,
) {
    let hw = h * w;
    let (ph, pw) = (h + 2, w + 2);
    let p = pad1(x, c, h, w);
    let mut oc = 0;
    while oc < o {
        // up to four output channels share every input load
        let nb = (o - oc).min(4);
        let block = &mut y[oc * hw..(oc + nb) * hw];
        for oy in 0..h {
            for ch in 0..c {
                let base = ch * ph * pw + oy * pw;
                let r0 = &p[base..][..pw];
                let r1 = &p[base + pw..][..pw];
                let r2 = &p[base + 2 * pw..][..pw];
                let taps = [
                    &r0[..w],
                    &r0[1..w + 1],
                    &r0[2..w + 2],
                    &r1[..w],
                    &r1[1..w + 1],
                    &r1[2..w + 2],
                    &r2[..w],
                    &r2[1..w + 1],
                    &r2[2..w + 2],
                ];
                if nb == 4 {
                    let kq: [&[T]; 4] =
                        std::array::from_fn(|j| &k[((oc + j) * c + ch) * KK..][..KK]);
                    let (y0, rest) = block.split_at_mut(hw);
                    let (y1, rest) = rest.split_at_mut(hw);
                    let (y2, y3) = rest.split_at_mut(hw);
                    let rows = [
                        &mut y0[oy * w..][..w],
                        &mut y1[oy * w..][..w],
                        &mut y2[oy * w..][..w],
                        &mut y3[oy * w..][..w],
                    ];
                    let [o0, o1, o2, o3] = rows;
                    for i in 0..w {
                        let v: [T; KK] = std::array::from_fn(|t| taps[t][i]);
                        let mut s = [T::zero(); 4];
                        for j in 0..4 {
                            let kj = kq[j];
                            s[j] = (kj[0] * v[0] + kj[1] * v[1] + kj[2] * v[2])
                                + (kj[3] * v[3] + kj[4] * v[4] + kj[5] * v[5])
                                + (kj[6] * v[6] + kj[7] * v[7] + kj[8] * v[8]);
                        }
                        o0[i] = o0[i] + s[0];
                        o1[i] = o1[i] + s[1];
                        o2[i] = o2[i] + s[2];
                        o3[i] = o3[i] + s[3];
                    }
                } else {
                    for j in 0..nb {
                        let kj = &k[((oc + j) * c + ch) * KK..][..KK];
                        let row = &mut block[j * hw + oy * w..][..w];
                        for i in 0..w {
                            row[i] = row[i]
                                + (kj[0] * taps[0][i] + kj[1] * taps[1][i] + kj[2] * taps[2][i])
                                + (kj[3] * taps[3][i] + kj[4] * taps[4][i] + kj[5] * taps[5][i])
                                + (kj[6] * taps[6][i] + kj[7] * taps[7][i] + kj[8] * taps[8][i]);
                        }
                    }
                }
            }
        }
        oc += nb;
    }
}

/// `C×O×3×3` transposed-conv kernels as the equivalent `O×C×3×3` correlation kernels.
fn flip_transpose<T: Scalar>(k: &[T], c: usize, o: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k.len()];
    for ch in 0..c {
        for oc in 0..o {
            for t in 0..KK {
                out[(oc * c + ch) * KK + t] = k[(ch * o + oc) * KK + (KK - 1 - t)];
            }
        }
    }
    out
}

/// 3×3 convolution, stride 1, zero padding 1: `C×H×W` with `O×C×3×3` → `O×H×W`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3("conv2d")?;
    let (o, kc) = check_kernel("conv2d", kernels)?;
    if kc != c {
        return Err(Error::shape("conv2d kernel channels", c, kc));
    }
    if bias.shape() != [o] {
        return Err(Error::shape("conv2d bias", [o], bias.shape()));
    }
    let hw = h * w;
    let mut y = vec![T::zero(); o * hw];
    if c * o <= DIRECT_MAX_PAIRS {
        add_channel_bias(&mut y, bias.data(), hw);
        conv3x3_direct(x.data(), kernels.data(), &mut y, c, o, h, w);
        return Tensor::new(vec![o, h, w], y);
    }
    let cols = im2col(x.data(), c, h, w);
    gemm(
        o,
        c * KK,
        hw,
        T::one(),
        kernels.data(),
        Trans::No,
        &cols,
        Trans::No,
        T::zero(),
        &mut y,
    );
    add_channel_bias(&mut y, bias.data(), hw);
    Tensor::new(vec![o, h, w], y)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (c, h, w) = x.dims3("conv2d_backward")?;
    let (o, _) = check_kernel("conv2d_backward", kernels)?;
    if dy.shape() != [o, h, w] {
        return Err(Error::shape("conv2d_backward grad", [o, h, w], dy.shape()));
    }
    let hw = h * w;
    let dk = if c * o <= DIRECT_MAX_PAIRS {
        conv3x3_weight_grad_direct(x.data(), dy.data(), c, o, h, w)
    } else {
        let cols = im2col(x.data(), c, h, w);
        let mut dk = vec![T::zero(); o * c * KK];
        gemm(
            o,
            hw,
            c * KK,
            T::one(),
            dy.data(),
            Trans::No,
            &cols,
            Trans::Yes,
            T::zero(),
            &mut dk,
        );
        dk
    };
    // the input gradient is the transposed convolution with the same array
    Ok(ConvGrads {
        input: conv_transpose2d(dy, kernels, &Tensor::zeros(&[c]))?,
        kernels: Tensor::new(kernels.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![o], channel_sums(dy.data(), hw))?,
    })
}

/// Transposed 3×3 convolution, stride 1, padding 1: `C×H×W` with `C×O×3×3` → `O×H×W`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3("conv_transpose2d")?;
    let (kc, o) = check_kernel("conv_transpose2d", kernels)?;
    if kc != c {
        return Err(Error::shape("conv_transpose2d kernel channels", c, kc));
    }
    if bias.shape() != [o] {
        return Err(Error::shape("conv_transpose2d bias", [o], bias.shape()));
    }
    let hw = h * w;
    if c * o <= DIRECT_MAX_PAIRS {
        let mut y = vec![T::zero(); o * hw];
        add_channel_bias(&mut y, bias.data(), hw);
        let flipped = flip_transpose(kernels.data(), c, o);
        conv3x3_direct(x.data(), &flipped, &mut y, c, o, h, w);
        return Tensor::new(vec![o, h, w], y);
    }
    let mut cols = vec![T::zero(); o * KK * hw];
    gemm(
        o * KK,
        c,
        hw,
        T::one(),
        kernels.data(),
        Trans::Yes,
        x.data(),
        Trans::No,
        T::zero(),
        &mut cols,
    );
    let mut y = col2im(&cols, o, h, w);
    add_channel_bias(&mut y, bias.data(), hw);
    Tensor::new(vec![o, h, w], y)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (c, h, w) = x.dims3("conv_transpose2d_backward")?;
    let (_, o) = check_kernel("conv_transpose2d_backward", kernels)?;
    if dy.shape() != [o, h, w] {
        return Err(Error::shape(
            "conv_transpose2d_backward grad",
            [o, h, w],
            dy.shape(),
        ));
    }
    let hw = h * w;
    let dx = conv2d(dy, kernels, &Tensor::zeros(&[c]))?;
    let dk = if c * o <= DIRECT_MAX_PAIRS {
        // the forward pass is a correlation with the flipped O×C kernels
        let flipped = conv3x3_weight_grad_direct(x.data(), dy.data(), c, o, h, w);
        flip_transpose(&flipped, o, c)
    } else {
        let dcols = im2col(dy.data(), o, h, w);
        let mut dk = vec![T::zero(); c * o * KK];
        gemm(
            c,
            hw,
            o * KK,
            T::one(),
            x.data(),
            Trans::No,
            &dcols,
            Trans::Yes,
            T::zero(),
            &mut dk,
        );
        dk
    };
    Ok(ConvGrads {
        input: dx,
        kernels: Tensor::new(kernels.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![o], channel_sums(dy.data(), hw))?,
    })
}

/// Output extents of the 3×3 / stride 2 / padding 1 max-pool.
pub fn pooled_extent(n: usize) -> usize {
    n.div_ceil(2)
}

/// 3×3 max-pool with stride 2 and padding 1. Padding never wins.
///
/// Returns the pooled tensor and, per output cell, the flat index of the
/// selected input element (first maximum in row-major window order).
pub fn maxpool3x3s2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = x.dims3("maxpool3x3s2")?;
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    let xd = x.data();
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            let y0 = (2 * oy).saturating_sub(1);
            let y1 = (2 * oy + 1).min(h - 1);
            for ox in 0..ow {
                let x0 = (2 * ox).saturating_sub(1);
                let x1 = (2 * ox + 1).min(w - 1);
                let mut best = base + y0 * w + x0;
                for iy in y0..=y1 {
                    for ix in x0..=x1 {
                        let idx = base + iy * w + ix;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                y.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], y)?, arg))
}

pub fn maxpool3x3s2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != dy.len() {
        return Err(Error::shape(
            "maxpool3x3s2_backward",
            argmax.len(),
            dy.len(),
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] = d[i] + g;
    }
    Ok(dx)
}

/// Corner-aligned source coordinate taps for one axis: `(i0, i1, frac)`.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = (o * (src - 1)) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Corner-aligned bilinear upsampling of `C×h×w` to `C×H×W` (`H ≥ h`, `W ≥ w`).
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3("bilinear_resize")?;
    let (th, tw) = target;
    if th < h || tw < w || th == 0 || tw == 0 {
        return Err(Error::Downscale {
            from: (h, w),
            to: target,
        });
    }
    let ty = bilinear_taps(h, th);
    let tx = bilinear_taps(w, tw);
    let xd = x.data();
    let mut y = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        let p = &xd[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let fy = T::from_f64_lossy(fy);
            for &(x0, x1, fx) in &tx {
                let fx = T::from_f64_lossy(fx);
                let top = p[y0 * w + x0] + (p[y0 * w + x1] - p[y0 * w + x0]) * fx;
                let bot = p[y1 * w + x0] + (p[y1 * w + x1] - p[y1 * w + x0]) * fx;
                y.push(top + (bot - top) * fy);
            }
        }
    }
    Tensor::new(vec![c, th, tw], y)
}

pub fn bilinear_resize_backward<T: Scalar>(
    input_shape: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, h, w) = match input_shape {
        &[c, h, w] => (c, h, w),
        _ => {
            return Err(Error::shape(
                "bilinear_resize_backward",
                "rank-3",
                input_shape,
            ))
        }
    };
    let (dc, th, tw) = dy.dims3("bilinear_resize_backward")?;
    if dc != c {
        return Err(Error::shape("bilinear_resize_backward", c, dc));
    }
    let ty = bilinear_taps(h, th);
    let tx = bilinear_taps(w, tw);
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    let g = dy.data();
    let one = T::one();
    for ch in 0..c {
        let p = &mut d[ch * h * w..(ch + 1) * h * w];
        let gp = &g[ch * th * tw..(ch + 1) * th * tw];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let v = gp[oy * tw + ox];
                p[y0 * w + x0] = p[y0 * w + x0] + v * (one - fy) * (one - fx);
                p[y0 * w + x1] = p[y0 * w + x1] + v * (one - fy) * fx;
                p[y1 * w + x0] = p[y1 * w + x0] + v * fy * (one - fx);
                p[y1 * w + x1] = p[y1 * w + x1] + v * fy * fx;
            }
        }
    }
    Ok(dx)
}

fn linear_dims<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, input) = match x.shape()[..] {
        [n, i] => (n, i),
        _ => return Err(Error::shape("linear", "rank-2 N×in", x.shape())),
    };
    let out = match weight.shape()[..] {
        [o, i] if i == input => o,
        _ => {
            return Err(Error::shape(
                "linear weight",
                format!("out×{input}"),
                weight.shape(),
            ))
        }
    };
    Ok((n, input, out))
}

const GEMV_ROWS: usize = 4;

/// Dot product with eight independent partial sums so it vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: T = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&p, &q)| p * q)
        .sum();
    for (pa, pb) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + pa[k] * pb[k];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Fully connected layer over a batch: `N×in` with weight `out×in` → `N×out`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, input, out) = linear_dims(x, weight)?;
    if bias.shape() != [out] {
        return Err(Error::shape("linear bias", [out], bias.shape()));
    }
    let mut y = vec![T::zero(); n * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(bias.data());
    }
    if n <= GEMV_ROWS {
        // GEMM would repack the whole weight matrix for a handful of rows
        for (o, w) in weight.data().chunks_exact(input).enumerate() {
            for (r, xr) in x.data().chunks_exact(input).enumerate() {
                y[r * out + o] = y[r * out + o] + dot(w, xr);
            }
        }
        return Tensor::new(vec![n, out], y);
    }
    gemm(
        n,
        input,
        out,
        T::one(),
        x.data(),
        Trans::No,
        weight.data(),
        Trans::Yes,
        T::one(),
        &mut y,
    );
    Tensor::new(vec![n, out], y)
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, input, out) = linear_dims(x, weight)?;
    if dy.shape() != [n, out] {
        return Err(Error::shape("linear_backward grad", [n, out], dy.shape()));
    }
    let mut dx = vec![T::zero(); n * input];
    gemm(
        n,
        out,
        input,
        T::one(),
        dy.data(),
        Trans::No,
        weight.data(),
        Trans::No,
        T::zero(),
        &mut dx,
    );
    let mut dw = vec![T::zero(); out * input];
    gemm(
        out,
        n,
        input,
        T::one(),
        dy.data(),
        Trans::Yes,
        x.data(),
        Trans::No,
        T::zero(),
        &mut dw,
    );
    let mut db = vec![T::zero(); out];
    for row in dy.data().chunks(out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(vec![n, input], dx)?,
        kernels: Tensor::new(vec![out, input], dw)?,
        bias: Tensor::new(vec![out], db)?,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through relu given the forward *output* (positive where active).
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(dy, "relu_backward", |o, g| {
        if o > T::zero() {
            g
        } else {
            T::zero()
        }
    })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Gradient through sigmoid given the forward output `s`: `s(1−s)`.
pub fn sigmoid_backward<T: Scalar>(s: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    s.zip_map(dy, "sigmoid_backward", |s, g| g * s * (T::one() - s))
}

/// Mean of squared differences over all elements.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    a.expect_same_shape(b, "mse")?;
    let n = T::from_usize(a.len()).expect("length fits");
    let s: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(s / n)
}

/// Gradient of [`mse`] with respect to `a`: `2(a−b)/N`.
pub fn mse_grad<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let two_over_n = T::from_f64_lossy(2.0 / a.len() as f64);
    a.zip_map(b, "mse_grad", |x, y| (x - y) * two_over_n)
}
