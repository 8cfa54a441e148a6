//! Generalized divisive normalization. Parameters enter squared (plus a
//! floor on beta) so the pooled denominator stays positive for any raw
//! value; gradients chain through the reparameterization.

use super::{record, Op, Tensor};
use crate::error::{Error, Result};

type Grads = Vec<Option<Vec<f32>>>;

pub(crate) const BETA_FLOOR: f32 = 1e-6;

fn gemm_sq(c: usize, hw: usize, a: &[f32], ta: bool, b: &[f32], acc: bool, out: &mut [f32]) {
    let (rsa, csa) = if ta { (1, c as isize) } else { (c as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            c,
            c,
            hw,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            hw as isize,
            1,
            if acc { 1.0 } else { 0.0 },
            out.as_mut_ptr(),
            hw as isize,
            1,
        );
    }
}

fn gemm_wxt(c: usize, hw: usize, w: &[f32], xsq: &[f32], acc: bool, out: &mut [f32]) {
    // out[C, C] (+)= w[C, hw] . xsq[C, hw]^T
    unsafe {
        matrixmultiply::sgemm(
            c,
            hw,
            c,
            1.0,
            w.as_ptr(),
            hw as isize,
            1,
            xsq.as_ptr(),
            1,
            hw as isize,
            if acc { 1.0 } else { 0.0 },
            out.as_mut_ptr(),
            c as isize,
            1,
        );
    }
}

/// y = x * (beta + gamma . x^2)^(-1/2) per spatial position, with
/// beta = beta_raw^2 + 1e-6 and gamma = gamma_raw^2. `inverse` flips the
/// exponent sign (IGDN). x: [N, C, H, W], beta_raw: [C], gamma_raw: [C, C].
pub fn gdn(x: &Tensor, beta_raw: &Tensor, gamma_raw: &Tensor, inverse: bool) -> Result<Tensor> {
    let (n, c, h, w) = match x.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => return Err(Error::Shape(format!("gdn expects NCHW, got {:?}", s))),
    };
    if beta_raw.shape() != [c] || gamma_raw.shape() != [c, c] {
        return Err(Error::Shape(format!(
            "gdn params for {} channels, got beta {:?} gamma {:?}",
            c,
            beta_raw.shape(),
            gamma_raw.shape()
        )));
    }
    let hw = h * w;
    let beta: Vec<f32> = beta_raw.data().iter().map(|b| b * b + BETA_FLOOR).collect();
    let gamma: Vec<f32> = gamma_raw.data().iter().map(|g| g * g).collect();
    let mut xsq = vec![0.0f32; c * hw];
    let mut z = vec![0.0f32; c * hw];
    let mut out = vec![0.0f32; n * c * hw];
    for ni in 0..n {
        let xn = &x.data()[ni * c * hw..(ni + 1) * c * hw];
        for (s, v) in xsq.iter_mut().zip(xn) {
            *s = v * v;
        }
        gemm_sq(c, hw, &gamma, false, &xsq, false, &mut z);
        let on = &mut out[ni * c * hw..(ni + 1) * c * hw];
        for ci in 0..c {
            let b = beta[ci];
            for k in 0..hw {
                let zz = z[ci * hw + k] + b;
                let t = if inverse { zz.sqrt() } else { 1.0 / zz.sqrt() };
                on[ci * hw + k] = xn[ci * hw + k] * t;
            }
        }
    }
    record(Op::Gdn { inverse }, &[x, beta_raw, gamma_raw], vec![n, c, h, w], out)
}

pub(super) fn gdn_backward(g: &[f32], ins: &[(&[usize], &[f32])], inverse: bool) -> Grads {
    let (xs, xd) = ins[0];
    let brd = ins[1].1;
    let grd = ins[2].1;
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let hw = h * w;
    let beta: Vec<f32> = brd.iter().map(|b| b * b + BETA_FLOOR).collect();
    let gamma: Vec<f32> = grd.iter().map(|v| v * v).collect();
    let mut xsq = vec![0.0f32; c * hw];
    let mut z = vec![0.0f32; c * hw];
    let mut wbuf = vec![0.0f32; c * hw];
    let mut pool = vec![0.0f32; c * hw];
    let mut gx = vec![0.0f32; n * c * hw];
    let mut gbeta = vec![0.0f64; c];
    let mut ggamma = vec![0.0f32; c * c];
    let half = if inverse { 0.5f32 } else { -0.5f32 };
    for ni in 0..n {
        let xn = &xd[ni * c * hw..(ni + 1) * c * hw];
        let gn = &g[ni * c * hw..(ni + 1) * c * hw];
        for (s, v) in xsq.iter_mut().zip(xn) {
            *s = v * v;
        }
        gemm_sq(c, hw, &gamma, false, &xsq, false, &mut z);
        for ci in 0..c {
            let b = beta[ci];
            for k in 0..hw {
                let idx = ci * hw + k;
                let zz = z[idx] + b;
                z[idx] = zz;
                // w = g*x*z^(-3/2) for gdn, g*x*z^(-1/2) for igdn
                let zp = if inverse {
                    1.0 / zz.sqrt()
                } else {
                    let r = 1.0 / zz.sqrt();
                    r / zz
                };
                wbuf[idx] = gn[idx] * xn[idx] * zp;
            }
        }
        for ci in 0..c {
            let mut s = 0.0f64;
            for k in 0..hw {
                s += wbuf[ci * hw + k] as f64;
            }
            gbeta[ci] += half as f64 * s;
        }
        gemm_wxt(c, hw, &wbuf, &xsq, ni > 0, &mut ggamma);
        gemm_sq(c, hw, &gamma, true, &wbuf, false, &mut pool);
        let gxn = &mut gx[ni * c * hw..(ni + 1) * c * hw];
        for ci in 0..c {
            for k in 0..hw {
                let idx = ci * hw + k;
                let t = if inverse {
                    z[idx].sqrt()
                } else {
                    1.0 / z[idx].sqrt()
                };
                gxn[idx] = gn[idx] * t + 2.0 * half * xn[idx] * pool[idx];
            }
        }
    }
    let gbr: Vec<f32> = gbeta
        .iter()
        .zip(brd)
        .map(|(gb, br)| (*gb * 2.0 * *br as f64) as f32)
        .collect();
    let ggr: Vec<f32> = ggamma
        .iter()
        .zip(grd)
        .map(|(gg, gr)| gg * half * 2.0 * gr)
        .collect();
    vec![Some(gx), Some(gbr), Some(ggr)]
}
