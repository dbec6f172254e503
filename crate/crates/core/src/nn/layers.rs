//! Layer kernels and their exact backward passes.
//!
//! Convolutions are cross-correlations (no kernel flip) with zero padding 1
//! and stride 1, lowered to GEMM through an im2col buffer.

use super::real::matmul;
use super::{Real, Tensor};
use crate::error::{invalid, shape, Result};

pub const BN_EPS: f64 = 1e-5;
/// Share of the previous running statistic kept at each update.
pub const BN_MOMENTUM: f64 = 0.9;

fn check_conv(x: &Tensor<impl Real>, weight_len: usize, bias_len: usize, cout: usize, taps: usize) -> Result<()> {
    let cin = x.channels();
    if weight_len != cout * cin * taps {
        return Err(shape(format!("weight has {weight_len} values, expected {cout}x{cin}x{taps} for a {cin}-channel input")));
    }
    if bias_len != cout {
        return Err(shape(format!("bias has {bias_len} values, expected {cout}")));
    }
    Ok(())
}

/// Unfold one `(cin, h, w)` sample into a `(cin * 9, h * w)` patch matrix.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for oy in 0..h {
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// [`im2col`] transposed: one `cin * 9` patch row per output pixel.
fn im2col_t<T: Real>(x: &[T], cin: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    let k = cin * 9;
    for oy in 0..h {
        for ox in 0..w {
            let row = &mut cols[(oy * w + ox) * k..(oy * w + ox + 1) * k];
            let interior_x = ox >= 1 && ox + 1 < w;
            for ci in 0..cin {
                let plane = &x[ci * hw..(ci + 1) * hw];
                for ky in 0..3 {
                    let dst = &mut row[ci * 9 + ky * 3..ci * 9 + ky * 3 + 3];
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if interior_x {
                        dst.copy_from_slice(&line[ox - 1..ox + 2]);
                    } else {
                        for (kx, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize + kx as isize - 1;
                            *d = if ix < 0 || ix >= w as isize { T::zero() } else { line[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch rows back into a sample.
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &row[oy * w..(oy + 1) * w];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, `weight` laid out `(cout, cin, 3, 3)`.
pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize) -> Result<Tensor<T>> {
    check_conv(x, weight.len(), bias.len(), cout, 9)?;
    let [n, cin, h, w] = x.shape();
    let hw = h * w;
    let mut y = Tensor::zeros([n, cout, h, w]);
    let mut cols = vec![T::zero(); cin * 9 * hw];
    for s in 0..n {
        im2col(x.sample(s), cin, h, w, &mut cols);
        let out = y.sample_mut(s);
        for (co, plane) in out.chunks_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        matmul(cout, cin * 9, hw, weight, false, &cols, false, out, true);
    }
    Ok(y)
}

pub struct ConvGrads<T> {
    /// Present when requested.
    pub dx: Option<Tensor<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub fn conv2d_backward<T: Real>(x: &Tensor<T>, weight: &[T], dy: &Tensor<T>, need_dx: bool) -> Result<ConvGrads<T>> {
    let [n, cin, h, w] = x.shape();
    let cout = dy.channels();
    if dy.shape() != [n, cout, h, w] || weight.len() != cout * cin * 9 {
        return Err(shape("conv2d backward: gradient does not match the forward shapes"));
    }
    let hw = h * w;
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); cout];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::zero(); cin * 9 * hw];
    for s in 0..n {
        let g = dy.sample(s);
        for (co, plane) in g.chunks(hw).enumerate() {
            db[co] += plane.iter().copied().sum::<T>();
        }
        im2col_t(x.sample(s), cin, h, w, &mut cols);
        matmul(cout, hw, cin * 9, g, false, &cols, false, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            matmul(cin * 9, cout, hw, weight, true, g, false, &mut cols, false);
            col2im(&cols, cin, h, w, dx.sample_mut(s));
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// 1x1 convolution, `weight` laid out `(cout, cin)`.
pub fn conv1x1<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize) -> Result<Tensor<T>> {
    check_conv(x, weight.len(), bias.len(), cout, 1)?;
    let [n, cin, h, w] = x.shape();
    let hw = h * w;
    let mut y = Tensor::zeros([n, cout, h, w]);
    for s in 0..n {
        let out = y.sample_mut(s);
        for (co, plane) in out.chunks_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        matmul(cout, cin, hw, weight, false, x.sample(s), false, out, true);
    }
    Ok(y)
}

pub fn conv1x1_backward<T: Real>(x: &Tensor<T>, weight: &[T], dy: &Tensor<T>, need_dx: bool) -> Result<ConvGrads<T>> {
    let [n, cin, h, w] = x.shape();
    let cout = dy.channels();
    if dy.shape() != [n, cout, h, w] || weight.len() != cout * cin {
        return Err(shape("conv1x1 backward: gradient does not match the forward shapes"));
    }
    let hw = h * w;
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); cout];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for s in 0..n {
        let g = dy.sample(s);
        for (co, plane) in g.chunks(hw).enumerate() {
            db[co] += plane.iter().copied().sum::<T>();
        }
        matmul(cout, hw, cin, g, false, x.sample(s), true, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            matmul(cin, cout, hw, weight, true, g, false, dx.sample_mut(s), false);
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where the forward input was positive.
pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Per-channel statistics saved by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn channel_iter<T: Real>(x: &Tensor<T>, c: usize) -> impl Iterator<Item = &T> {
    (0..x.batch()).flat_map(move |s| x.plane(s, c).iter())
}

/// Indices of the `(sample, channel)` planes of channel `c`.
fn planes(n: usize, c: usize, ch: usize, hw: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).map(move |s| {
        let off = (s * c + ch) * hw;
        off..off + hw
    })
}

/// Training-mode batch norm. Returns the output, the cache, and the batch
/// mean and unbiased variance per channel for the running statistics.
#[allow(clippy::type_complexity)]
pub fn batchnorm_train<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<(Tensor<T>, BnCache<T>, Vec<f64>, Vec<f64>)> {
    let [n, c, h, w] = x.shape();
    if gamma.len() != c || beta.len() != c {
        return Err(shape(format!("batch norm parameters do not match {c} channels")));
    }
    let count = n * h * w;
    if count < 2 {
        return Err(invalid("training-mode batch norm needs at least two values per channel"));
    }
    let hw = h * w;
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = vec![T::zero(); c];
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];
    for ch in 0..c {
        let mean = channel_iter(x, ch).map(|v| v.as_f64()).sum::<f64>() / count as f64;
        let var = channel_iter(x, ch).map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / count as f64;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = T::from_f64(inv);
        means[ch] = mean;
        vars[ch] = var * count as f64 / (count - 1) as f64;
        let (scale, shift) = (T::from_f64(inv), T::from_f64(-mean * inv));
        let (g, b) = (gamma[ch], beta[ch]);
        for r in planes(n, c, ch, hw) {
            let src = &x.data()[r.clone()];
            let xh = &mut xhat.data_mut()[r.clone()];
            for (o, &v) in xh.iter_mut().zip(src) {
                *o = v * scale + shift;
            }
            let xh = &xhat.data()[r.clone()];
            for (o, &v) in y.data_mut()[r].iter_mut().zip(xh) {
                *o = g * v + b;
            }
        }
    }
    Ok((y, BnCache { xhat, inv_std }, means, vars))
}

pub fn batchnorm_eval<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T], running_mean: &[T], running_var: &[T]) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(shape(format!("batch norm parameters do not match {c} channels")));
    }
    let mut y = Tensor::zeros(x.shape());
    for ch in 0..c {
        let inv = T::from_f64(1.0 / (running_var[ch].as_f64() + BN_EPS).sqrt());
        let scale = gamma[ch] * inv;
        let shift = beta[ch] - running_mean[ch] * scale;
        for r in planes(n, c, ch, h * w) {
            for (o, &v) in y.data_mut()[r.clone()].iter_mut().zip(&x.data()[r]) {
                *o = v * scale + shift;
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Real>(cache: &BnCache<T>, gamma: &[T], dy: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = dy.shape();
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for r in planes(n, c, ch, hw) {
            for (&g, &xh) in dy.data()[r.clone()].iter().zip(&cache.xhat.data()[r]) {
                sum_dy += g.as_f64();
                sum_dy_xhat += g.as_f64() * xh.as_f64();
            }
        }
        dbeta[ch] = T::from_f64(sum_dy);
        dgamma[ch] = T::from_f64(sum_dy_xhat);
        let k = gamma[ch].as_f64() * cache.inv_std[ch].as_f64() / count;
        // dx = k * (count * dy - sum_dy - xhat * sum_dy_xhat)
        let (a, b, cc) = (T::from_f64(k * count), T::from_f64(-k * sum_dy), T::from_f64(-k * sum_dy_xhat));
        for r in planes(n, c, ch, hw) {
            let src = dy.data()[r.clone()].iter().zip(&cache.xhat.data()[r.clone()]);
            for (o, (&g, &xh)) in dx.data_mut()[r].iter_mut().zip(src) {
                *o = a * g + b + cc * xh;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// 2x2 max pooling; also returns the flat input index chosen for each output.
/// Ties go to the first element in row-major order.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid(format!("max pooling needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for cand in [base + 2 * i * w + 2 * j + 1, base + (2 * i + 1) * w + 2 * j, base + (2 * i + 1) * w + 2 * j + 1] {
                    if x.data()[cand] > x.data()[best] {
                        best = cand;
                    }
                }
                let o = p * oh * ow + i * ow + j;
                y.data_mut()[o] = x.data()[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Real>(dy: &Tensor<T>, argmax: &[u32], input_shape: [usize; 4]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&g, &a) in dy.data().iter().zip(argmax) {
        dx.data_mut()[a as usize] += g;
    }
    dx
}

/// 2x2 average unpooling: every value is copied into a 2x2 block.
pub fn avgunpool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    y
}

/// Exact gradient of [`avgunpool2`]: each input collects the sum of its block.
pub fn avgunpool2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, oh, ow] = dy.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let src = &dy.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[(i / 2) * w + j / 2] += src[i * ow + j];
            }
        }
    }
    dx
}

/// Stack `a` then `b` along the channel axis.
pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(shape(format!("cannot concatenate {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut y = Tensor::zeros([n, ca + cb, h, w]);
    for s in 0..n {
        let out = y.sample_mut(s);
        let split = ca * h * w;
        out[..split].copy_from_slice(a.sample(s));
        out[split..].copy_from_slice(b.sample(s));
    }
    Ok(y)
}

/// Split a channel gradient back into the `a` part (`ca` channels) and the rest.
pub fn concat_backward<T: Real>(dy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = dy.shape();
    let mut da = Tensor::zeros([n, ca, h, w]);
    let mut db = Tensor::zeros([n, c - ca, h, w]);
    let split = ca * h * w;
    for s in 0..n {
        da.sample_mut(s).copy_from_slice(&dy.sample(s)[..split]);
        db.sample_mut(s).copy_from_slice(&dy.sample(s)[split..]);
    }
    (da, db)
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2)).sum();
    Ok(T::from_f64(sum / pred.len() as f64))
}

/// `2 (pred - target) / count`.
pub fn mse_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    let k = T::from_f64(2.0 / pred.len() as f64);
    let mut g = pred.clone();
    for (d, &t) in g.data_mut().iter_mut().zip(target.data()) {
        *d = (*d - t) * k;
    }
    g
}
