//! conv2d and its transpose, lowered to im2col plus a single sgemm per image.
//! deconv2d is the exact adjoint of conv2d with the same [O, I, K, K] kernel:
//! its forward is conv2d's backward-data path, so <conv(a, k), b> equals
//! <a, deconv(b, k)> by construction.

use super::{record, Op, Tensor};
use crate::error::{Error, Result};

type Grads = Vec<Option<Vec<f32>>>;

pub fn conv2d_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub fn deconv2d_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + k;
    if full < 2 * pad + 1 {
        return None;
    }
    Some(full - 2 * pad)
}

/// c[m, n] = a . b (+ c when acc), row-major slices, optional transposed reads.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    acc: bool,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
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
            if acc { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// col[(ic*K + ky)*K + kx, y*ow + x] = x[ic, y*s + ky - p, x*s + kx - p] or 0.
fn im2col(
    x: &[f32],
    ch: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
    col: &mut [f32],
) {
    debug_assert_eq!(col.len(), ch * k * k * oh * ow);
    let mut r = 0;
    for ic in 0..ch {
        let plane = &x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[r * oh * ow..(r + 1) * oh * ow];
                r += 1;
                for y in 0..oh {
                    let iy = (y * s + ky) as isize - p as isize;
                    let seg = &mut row[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (xo, out) in seg.iter_mut().enumerate() {
                        let ix = (xo * s + kx) as isize - p as isize;
                        *out = if ix >= 0 && (ix as isize) < w as isize {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add col entries back onto the image grid.
fn col2im(
    col: &[f32],
    ch: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
    im: &mut [f32],
) {
    debug_assert_eq!(col.len(), ch * k * k * oh * ow);
    debug_assert_eq!(im.len(), ch * h * w);
    let mut r = 0;
    for ic in 0..ch {
        let plane = &mut im[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[r * oh * ow..(r + 1) * oh * ow];
                r += 1;
                for y in 0..oh {
                    let iy = (y * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let seg = &row[y * ow..(y + 1) * ow];
                    for (xo, v) in seg.iter().enumerate() {
                        let ix = (xo * s + kx) as isize - p as isize;
                        if ix >= 0 && (ix as isize) < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_shapes(
    x: &Tensor,
    kern: &Tensor,
    what: &str,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = match x.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => return Err(Error::Shape(format!("{} input must be NCHW, got {:?}", what, s))),
    };
    let (o, i, k) = match kern.shape() {
        [o, i, k1, k2] if k1 == k2 => (*o, *i, *k1),
        s => {
            return Err(Error::Shape(format!(
                "{} kernel must be [O, I, K, K], got {:?}",
                what, s
            )))
        }
    };
    Ok((n, c, h, w, o, i, k))
}

/// Zero-padded strided cross-correlation. x: [N, I, H, W], kernel:
/// [O, I, K, K] -> [N, O, OH, OW].
pub fn conv2d(x: &Tensor, kern: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, w, o, i, k) = conv_shapes(x, kern, "conv2d")?;
    if c != i {
        return Err(Error::Shape(format!(
            "conv2d: input has {} channels, kernel expects {}",
            c, i
        )));
    }
    let oh = conv2d_out_dim(h, k, stride, pad)
        .ok_or_else(|| Error::Shape(format!("conv2d: {}x{} too small for k={}", h, w, k)))?;
    let ow = conv2d_out_dim(w, k, stride, pad)
        .ok_or_else(|| Error::Shape(format!("conv2d: {}x{} too small for k={}", h, w, k)))?;
    let (ikk, l) = (i * k * k, oh * ow);
    let mut col = vec![0.0f32; ikk * l];
    let mut out = vec![0.0f32; n * o * l];
    for ni in 0..n {
        im2col(&x.data()[ni * c * h * w..], c, h, w, k, stride, pad, oh, ow, &mut col);
        gemm(o, ikk, l, kern.data(), false, &col, false, false, &mut out[ni * o * l..(ni + 1) * o * l]);
    }
    record(Op::Conv2d { stride, pad }, &[x, kern], vec![n, o, oh, ow], out)
}

pub(super) fn conv2d_backward(
    g: &[f32],
    xs: &[usize],
    xd: &[f32],
    ks: &[usize],
    kd: &[f32],
    stride: usize,
    pad: usize,
) -> Grads {
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, i, k) = (ks[0], ks[1], ks[2]);
    let oh = conv2d_out_dim(h, k, stride, pad).unwrap();
    let ow = conv2d_out_dim(w, k, stride, pad).unwrap();
    let (ikk, l) = (i * k * k, oh * ow);
    let mut col = vec![0.0f32; ikk * l];
    let mut gx = vec![0.0f32; n * c * h * w];
    let mut gw = vec![0.0f32; o * ikk];
    for ni in 0..n {
        let gn = &g[ni * o * l..(ni + 1) * o * l];
        // d/dfilter: g_n . col_n^T
        im2col(&xd[ni * c * h * w..], c, h, w, k, stride, pad, oh, ow, &mut col);
        gemm(o, l, ikk, gn, false, &col, true, true, &mut gw);
        // d/dinput: col2im(W^T . g_n)
        gemm(ikk, o, l, kd, true, gn, false, false, &mut col);
        col2im(&col, c, h, w, k, stride, pad, oh, ow, &mut gx[ni * c * h * w..(ni + 1) * c * h * w]);
    }
    vec![Some(gx), Some(gw)]
}

/// Transposed conv. x: [N, O, H, W], kernel: [O, I, K, K] ->
/// [N, I, (H-1)*stride - 2*pad + K, ...]. Adjoint of `conv2d` in its input.
pub fn deconv2d(x: &Tensor, kern: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, w, o, i, k) = conv_shapes(x, kern, "deconv2d")?;
    if c != o {
        return Err(Error::Shape(format!(
            "deconv2d: input has {} channels, kernel expects {}",
            c, o
        )));
    }
    let oh = deconv2d_out_dim(h, k, stride, pad)
        .ok_or_else(|| Error::Shape("deconv2d: output would be empty".into()))?;
    let ow = deconv2d_out_dim(w, k, stride, pad)
        .ok_or_else(|| Error::Shape("deconv2d: output would be empty".into()))?;
    let (ikk, l) = (i * k * k, h * w);
    let mut col = vec![0.0f32; ikk * l];
    let mut out = vec![0.0f32; n * i * oh * ow];
    for ni in 0..n {
        gemm(ikk, o, l, kern.data(), true, &x.data()[ni * o * l..(ni + 1) * o * l], false, false, &mut col);
        col2im(
            &col,
            i,
            oh,
            ow,
            k,
            stride,
            pad,
            h,
            w,
            &mut out[ni * i * oh * ow..(ni + 1) * i * oh * ow],
        );
    }
    record(Op::Deconv2d { stride, pad }, &[x, kern], vec![n, i, oh, ow], out)
}

pub(super) fn deconv2d_backward(
    g: &[f32],
    xs: &[usize],
    xd: &[f32],
    ks: &[usize],
    kd: &[f32],
    stride: usize,
    pad: usize,
) -> Grads {
    let (n, o, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (i, k) = (ks[1], ks[2]);
    let oh = deconv2d_out_dim(h, k, stride, pad).unwrap();
    let ow = deconv2d_out_dim(w, k, stride, pad).unwrap();
    let (ikk, l) = (i * k * k, h * w);
    let mut col = vec![0.0f32; ikk * l];
    let mut gx = vec![0.0f32; n * o * l];
    let mut gw = vec![0.0f32; o * ikk];
    for ni in 0..n {
        im2col(&g[ni * i * oh * ow..], i, oh, ow, k, stride, pad, h, w, &mut col);
        gemm(o, ikk, l, kd, false, &col, false, false, &mut gx[ni * o * l..(ni + 1) * o * l]);
        gemm(o, l, ikk, &xd[ni * o * l..(ni + 1) * o * l], false, &col, true, true, &mut gw);
    }
    vec![Some(gx), Some(gw)]
}
