//! Dense numeric kernels behind the tape operations. All reductions run in a
//! fixed order (sample-major, then row-major) so results are bit-identical
//! across runs; cross-sample statistics are defined as ordered sums of
//! per-sample partials.

use crate::scalar::Scalar;

/// `c += a @ b` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
/// Accumulation over `k` is ascending for every output element.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    // Four output rows per pass keeps each b row in registers longer.
    while i + 4 <= m {
        let block = &mut c[i * n..(i + 4) * n];
        let (c01, c23) = block.split_at_mut(2 * n);
        let (c0, c1) = c01.split_at_mut(n);
        let (c2, c3) = c23.split_at_mut(n);
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let br = &b[p * n..(p + 1) * n];
            for ((((x0, x1), x2), x3), &bv) in c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut())
                .zip(br.iter())
            {
                *x0 = *x0 + a0 * bv;
                *x1 = *x1 + a1 * bv;
                *x2 = *x2 + a2 * bv;
                *x3 = *x3 + a3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let br = &b[p * n..(p + 1) * n];
            for (x, &bv) in crow.iter_mut().zip(br.iter()) {
                *x = *x + av * bv;
            }
        }
        i += 1;
    }
}

/// Row-major transpose: `out[j, i] = a[i, j]` for `a: rows x cols`.
pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfolds one sample `x: c x h x w` into `cols: (c*k*k) x (oh*ow)` patches.
pub fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    let plane = h * w;
    let ocols = oh * ow;
    let mut row = 0usize;
    for ci in 0..c {
        let xc = &x[ci * plane..(ci + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let dst_row = &mut cols[row * ocols..(row + 1) * ocols];
                row += 1;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let dst = &mut dst_row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &xc[(iy as usize) * w..(iy as usize) * w + w];
                    if stride == 1 {
                        let shift = kj as isize - pad as isize;
                        let ox_lo = (-shift).max(0) as usize;
                        let ox_hi = (w as isize - shift).clamp(0, ow as isize) as usize;
                        dst[..ox_lo.min(ow)].fill(T::zero());
                        if ox_hi > ox_lo {
                            let src_lo = (ox_lo as isize + shift) as usize;
                            dst[ox_lo..ox_hi]
                                .copy_from_slice(&src_row[src_lo..src_lo + (ox_hi - ox_lo)]);
                        }
                        if ox_hi < ow {
                            dst[ox_hi.max(ox_lo)..].fill(T::zero());
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Folds patch gradients back onto one sample (scatter-add inverse of `im2col`).
pub fn col2im_acc<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    debug_assert_eq!(dx.len(), c * h * w);
    let plane = h * w;
    let ocols = oh * ow;
    let mut row = 0usize;
    for ci in 0..c {
        let dxc = &mut dx[ci * plane..(ci + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let src_row = &cols[row * ocols..(row + 1) * ocols];
                row += 1;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (iy as usize) * w;
                    let src = &src_row[oy * ow..(oy + 1) * ow];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            let t = base + ix as usize;
                            dxc[t] = dxc[t] + g;
                        }
                    }
                }
            }
        }
    }
}

pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Batched convolution forward via per-sample im2col + matmul.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
) -> Vec<T> {
    let ckk = d.in_channels * d.kernel * d.kernel;
    let ocols = d.out_h * d.out_w;
    let in_sample = d.in_channels * d.in_h * d.in_w;
    let out_sample = d.out_channels * ocols;
    let mut out = vec![T::zero(); d.batch * out_sample];
    let mut cols = vec![T::zero(); ckk * ocols];
    for n in 0..d.batch {
        let xs = &x[n * in_sample..(n + 1) * in_sample];
        im2col(
            xs,
            d.in_channels,
            d.in_h,
            d.in_w,
            d.kernel,
            d.stride,
            d.pad,
            d.out_h,
            d.out_w,
            &mut cols,
        );
        let os = &mut out[n * out_sample..(n + 1) * out_sample];
        if let Some(b) = bias {
            for (o, &bv) in b.iter().enumerate() {
                os[o * ocols..(o + 1) * ocols].fill(bv);
            }
        }
        matmul_acc(weight, &cols, os, d.out_channels, ckk, ocols);
    }
    out
}

/// Batched convolution backward. Returns `(dx, dweight, dbias)`;
/// `dx` computed only when `need_dx`.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    d: &ConvDims,
    need_dx: bool,
    has_bias: bool,
) -> (Option<Vec<T>>, Vec<T>, Option<Vec<T>>) {
    let ckk = d.in_channels * d.kernel * d.kernel;
    let ocols = d.out_h * d.out_w;
    let in_sample = d.in_channels * d.in_h * d.in_w;
    let out_sample = d.out_channels * ocols;

    let mut dweight = vec![T::zero(); d.out_channels * ckk];
    let mut dbias = if has_bias {
        Some(vec![T::zero(); d.out_channels])
    } else {
        None
    };
    let mut dx = if need_dx {
        Some(vec![T::zero(); d.batch * in_sample])
    } else {
        None
    };

    let mut cols = vec![T::zero(); ckk * ocols];
    let mut cols_t = vec![T::zero(); ckk * ocols];
    let mut dcols = vec![T::zero(); ckk * ocols];
    let mut weight_t = vec![T::zero(); weight.len()];
    if need_dx {
        transpose(weight, d.out_channels, ckk, &mut weight_t);
    }

    for n in 0..d.batch {
        let xs = &x[n * in_sample..(n + 1) * in_sample];
        let dos = &dout[n * out_sample..(n + 1) * out_sample];
        im2col(
            xs,
            d.in_channels,
            d.in_h,
            d.in_w,
            d.kernel,
            d.stride,
            d.pad,
            d.out_h,
            d.out_w,
            &mut cols,
        );
        // dW += dOut_n @ cols_nᵀ
        transpose(&cols, ckk, ocols, &mut cols_t);
        matmul_acc(dos, &cols_t, &mut dweight, d.out_channels, ocols, ckk);
        if let Some(db) = dbias.as_mut() {
            for o in 0..d.out_channels {
                let row = &dos[o * ocols..(o + 1) * ocols];
                let s: T = row.iter().copied().sum();
                db[o] = db[o] + s;
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcols.fill(T::zero());
            matmul_acc(&weight_t, dos, &mut dcols, ckk, d.out_channels, ocols);
            col2im_acc(
                &dcols,
                d.in_channels,
                d.in_h,
                d.in_w,
                d.kernel,
                d.stride,
                d.pad,
                d.out_h,
                d.out_w,
                &mut dx[n * in_sample..(n + 1) * in_sample],
            );
        }
    }
    (dx, dweight, dbias)
}

/// Per-channel mean and inverse stddev over `(batch, spatial)`. Statistics
/// accumulate in f64 as ordered sums of per-sample partials.
pub fn batch_moments<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>) {
    let m = (batch * spatial) as f64;
    let mut mean = vec![0.0f64; channels];
    let mut var = vec![0.0f64; channels];
    for c in 0..channels {
        let mut total = 0.0f64;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            let mut part = 0.0f64;
            for v in &x[base..base + spatial] {
                part += v.as_f64();
            }
            total += part;
        }
        mean[c] = total / m;
    }
    for c in 0..channels {
        let mu = mean[c];
        let mut total = 0.0f64;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            let mut part = 0.0f64;
            for v in &x[base..base + spatial] {
                let d = v.as_f64() - mu;
                part += d * d;
            }
            total += part;
        }
        var[c] = total / m;
    }
    (mean, var)
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax with max subtraction; `logits: n x k`.
pub fn softmax_rows<T: Scalar>(logits: &[T], n: usize, k: usize) -> Vec<T> {
    let mut probs = vec![T::zero(); n * k];
    for r in 0..n {
        let row = &logits[r * k..(r + 1) * k];
        let mut mx = row[0];
        for &v in row.iter() {
            if v > mx {
                mx = v;
            }
        }
        let out = &mut probs[r * k..(r + 1) * k];
        let mut denom = T::zero();
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            let e = (v - mx).exp();
            *o = e;
            denom = denom + e;
        }
        for o in out.iter_mut() {
            *o = *o / denom;
        }
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matmul_naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive() {
        let m = 7;
        let k = 5;
        let n = 9;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut c, m, k, n);
        let want = matmul_naive(&a, &b, m, k, n);
        for (x, y) in c.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random y: the pair is adjoint.
        let (c, h, w, k, s, p) = (2, 5, 4, 3, 2, 1);
        let oh = conv_out_extent(h, k, s, p).unwrap();
        let ow = conv_out_extent(w, k, s, p).unwrap();
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..c * k * k * oh * ow)
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; c * k * k * oh * ow];
        im2col(&x, c, h, w, k, s, p, oh, ow, &mut cols);
        let lhs: f64 = cols.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let mut xt = vec![0.0; c * h * w];
        col2im_acc(&y, c, h, w, k, s, p, oh, ow, &mut xt);
        let rhs: f64 = x.iter().zip(xt.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let d = ConvDims {
            batch: 1,
            in_channels: 1,
            in_h: 3,
            in_w: 3,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            pad: 0,
            out_h: 1,
            out_w: 1,
        };
        let out = conv2d_forward(&[1.0f64; 9], &[1.0; 9], None, &d);
        assert_eq!(out, vec![9.0]);
    }

    #[test]
    fn sigmoid_extremes_stable() {
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert!(sigmoid(1000.0f64) <= 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
