//! Structural ops: padding, cropping, pooling, bias, row norms, and the
//! fused logistic rate term used by entropy-model training.

use super::{record, Op, Tensor};
use crate::error::{Error, Result};

type Grads = Vec<Option<Vec<f32>>>;

/// Smallest probability the rate term will assign to a bin.
pub(crate) const P_MIN: f64 = 1.0 / 32768.0;

fn nchw(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        s => Err(Error::Shape(format!("{} expects NCHW, got {:?}", what, s))),
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    debug_assert!(j >= 0 && j < n);
    j as usize
}

/// Mirror-pad the two spatial dims by `pad` on every side (edge sample not
/// repeated). Requires pad <= min(H, W) - 1.
pub fn reflect_pad2d(x: &Tensor, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = nchw(x, "reflect_pad2d")?;
    if pad >= h || pad >= w {
        return Err(Error::Shape(format!(
            "reflect pad {} too large for {}x{}",
            pad, h, w
        )));
    }
    if pad == 0 {
        return record(Op::ReflectPad { pad }, &[x], x.shape().to_vec(), x.data().to_vec());
    }
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f32; n * c * oh * ow];
    let xd = x.data();
    for nc in 0..n * c {
        let src = &xd[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
        for oy in 0..oh {
            let sy = reflect(oy as isize - pad as isize, h);
            for ox in 0..ow {
                let sx = reflect(ox as isize - pad as isize, w);
                dst[oy * ow + ox] = src[sy * w + sx];
            }
        }
    }
    record(Op::ReflectPad { pad }, &[x], vec![n, c, oh, ow], out)
}

pub(super) fn reflect_pad_backward(g: &[f32], xs: &[usize], pad: usize) -> Grads {
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut gx = vec![0.0f32; n * c * h * w];
    for nc in 0..n * c {
        let src = &g[nc * oh * ow..(nc + 1) * oh * ow];
        let dst = &mut gx[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            let sy = reflect(oy as isize - pad as isize, h);
            for ox in 0..ow {
                let sx = reflect(ox as isize - pad as isize, w);
                dst[sy * w + sx] += src[oy * ow + ox];
            }
        }
    }
    vec![Some(gx)]
}

/// Keep the top-left `th` x `tw` window of each plane.
pub fn crop2d(x: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    let (n, c, h, w) = nchw(x, "crop2d")?;
    if th > h || tw > w || th == 0 || tw == 0 {
        return Err(Error::Shape(format!(
            "crop {}x{} out of {}x{}",
            th, tw, h, w
        )));
    }
    let xd = x.data();
    let mut out = vec![0.0f32; n * c * th * tw];
    for nc in 0..n * c {
        let src = &xd[nc * h * w..];
        let dst = &mut out[nc * th * tw..(nc + 1) * th * tw];
        for y in 0..th {
            dst[y * tw..y * tw + tw].copy_from_slice(&src[y * w..y * w + tw]);
        }
    }
    record(Op::Crop2d { h: th, w: tw }, &[x], vec![n, c, th, tw], out)
}

pub(super) fn crop2d_backward(g: &[f32], xs: &[usize], th: usize, tw: usize) -> Grads {
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let mut gx = vec![0.0f32; n * c * h * w];
    for nc in 0..n * c {
        let src = &g[nc * th * tw..];
        let dst = &mut gx[nc * h * w..];
        for y in 0..th {
            dst[y * w..y * w + tw].copy_from_slice(&src[y * tw..y * tw + tw]);
        }
    }
    vec![Some(gx)]
}

/// Per-channel bias over NCHW.
pub fn bias_add(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw(x, "bias_add")?;
    if b.shape() != [c] {
        return Err(Error::Shape(format!(
            "bias shape {:?}, expected [{}]",
            b.shape(),
            c
        )));
    }
    let bd = b.data();
    let mut out = x.data().to_vec();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let bias = bd[ci];
            for v in &mut out[base..base + h * w] {
                *v += bias;
            }
        }
    }
    record(Op::BiasAdd, &[x, b], vec![n, c, h, w], out)
}

pub(super) fn bias_add_backward(g: &[f32], xs: &[usize], _bs: &[usize]) -> Grads {
    let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
    let mut gb = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let mut s = 0.0f64;
            for v in &g[base..base + hw] {
                s += *v as f64;
            }
            gb[ci] += s;
        }
    }
    vec![
        Some(g.to_vec()),
        Some(gb.into_iter().map(|v| v as f32).collect()),
    ]
}

/// NCHW -> [N, C], mean over the spatial dims (f64 accumulation).
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw(x, "global_avg_pool")?;
    let hw = (h * w) as f64;
    let xd = x.data();
    let mut out = vec![0.0f32; n * c];
    for nc in 0..n * c {
        let s: f64 = xd[nc * h * w..(nc + 1) * h * w]
            .iter()
            .map(|&v| v as f64)
            .sum();
        out[nc] = (s / hw) as f32;
    }
    record(Op::GlobalAvgPool, &[x], vec![n, c], out)
}

pub(super) fn global_avg_pool_backward(g: &[f32], xs: &[usize]) -> Grads {
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let inv = 1.0 / (h * w) as f32;
    let mut gx = vec![0.0f32; n * c * h * w];
    for nc in 0..n * c {
        let gv = g[nc] * inv;
        for v in &mut gx[nc * h * w..(nc + 1) * h * w] {
            *v = gv;
        }
    }
    vec![Some(gx)]
}

/// Mean over rows of the euclidean distance between corresponding rows of
/// two [N, C] tensors.
pub fn l2_rows_mean(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "l2_rows_mean expects matching [N, C], got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, c) = (a.shape()[0], a.shape()[1]);
    let mut total = 0.0f64;
    for ni in 0..n {
        let mut s = 0.0f64;
        for ci in 0..c {
            let d = (a.data()[ni * c + ci] - b.data()[ni * c + ci]) as f64;
            s += d * d;
        }
        total += s.sqrt();
    }
    let m = total / n as f64;
    super::finite_scalar(m, "l2_rows_mean")?;
    record(Op::L2RowsMean, &[a, b], vec![1], vec![m as f32])
}

pub(super) fn l2_rows_mean_backward(g: f32, s: &[usize], a: &[f32], b: &[f32]) -> Grads {
    let (n, c) = (s[0], s[1]);
    let mut ga = vec![0.0f32; n * c];
    for ni in 0..n {
        let row = &a[ni * c..ni * c + c];
        let rowb = &b[ni * c..ni * c + c];
        let norm: f64 = row
            .iter()
            .zip(rowb)
            .map(|(x, y)| {
                let d = (x - y) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let coef = g as f64 / (n as f64 * norm.max(1e-12));
        for ci in 0..c {
            ga[ni * c + ci] = (coef * (row[ci] - rowb[ci]) as f64) as f32;
        }
    }
    let gb = ga.iter().map(|v| -v).collect();
    vec![Some(ga), Some(gb)]
}

fn per_channel(t: &Tensor, c: usize, what: &str) -> Result<()> {
    if t.shape() != [c] {
        return Err(Error::Shape(format!(
            "{} expects [{}], got {:?}",
            what,
            c,
            t.shape()
        )));
    }
    Ok(())
}

/// Logistic mass of the unit bin centered on `v`, in f64. Written as a tanh
/// difference so the value is exactly symmetric under (v - mu) -> -(v - mu).
pub(crate) fn logistic_bin_mass(v: f64, mu: f64, inv_scale: f64) -> f64 {
    let u = (v - mu + 0.5) * inv_scale;
    let l = (v - mu - 0.5) * inv_scale;
    0.5 * ((0.5 * u).tanh() - (0.5 * l).tanh())
}

/// Total bits to code `y` under a per-channel logistic, with each bin mass
/// floored at 2^-15: sum of -log2 max(mass, floor). Differentiable in y, mu,
/// and log_scale (zero gradient through floored bins).
pub fn logistic_rate_bits(y: &Tensor, mu: &Tensor, log_scale: &Tensor) -> Result<Tensor> {
    let (_, c, _, _) = nchw(y, "logistic_rate_bits")?;
    per_channel(mu, c, "mu")?;
    per_channel(log_scale, c, "log_scale")?;
    let (n, _, h, w) = nchw(y, "logistic_rate_bits")?;
    let hw = h * w;
    let mut bits = 0.0f64;
    for ni in 0..n {
        for ci in 0..c {
            let m = mu.data()[ci] as f64;
            let inv_s = (-(log_scale.data()[ci] as f64)).exp();
            let base = (ni * c + ci) * hw;
            for &v in &y.data()[base..base + hw] {
                let p = logistic_bin_mass(v as f64, m, inv_s).max(P_MIN);
                bits -= p.log2();
            }
        }
    }
    super::finite_scalar(bits, "logistic_rate_bits")?;
    record(Op::LogisticRateBits, &[y, mu, log_scale], vec![1], vec![bits as f32])
}

pub(super) fn logistic_rate_bits_backward(g: f32, ins: &[(&[usize], &[f32])]) -> Grads {
    let (ys, yd) = ins[0];
    let mud = ins[1].1;
    let lsd = ins[2].1;
    let (n, c, hw) = (ys[0], ys[1], ys[2] * ys[3]);
    let g = g as f64;
    let ln2 = std::f64::consts::LN_2;
    let mut gy = vec![0.0f32; yd.len()];
    let mut gmu = vec![0.0f64; c];
    let mut gls = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let m = mud[ci] as f64;
            let s = lsd[ci] as f64;
            let inv_s = (-s).exp();
            let base = (ni * c + ci) * hw;
            for (k, &vf) in yd[base..base + hw].iter().enumerate() {
                let v = vf as f64;
                let u = (v - m + 0.5) * inv_s;
                let l = (v - m - 0.5) * inv_s;
                let tu = (0.5 * u).tanh();
                let tl = (0.5 * l).tanh();
                let p = 0.5 * (tu - tl);
                if p <= P_MIN {
                    continue;
                }
                // d(-log2 p)/dp, then p's partials via the tanh halves
                let dbdp = -g / (p * ln2);
                let au = 0.25 * (1.0 - tu * tu);
                let al = 0.25 * (1.0 - tl * tl);
                let dp_dv = (au - al) * inv_s;
                let dp_ds = al * l - au * u;
                gy[base + k] += (dbdp * dp_dv) as f32;
                gmu[ci] -= dbdp * dp_dv;
                gls[ci] += dbdp * dp_ds;
            }
        }
    }
    vec![
        Some(gy),
        Some(gmu.into_iter().map(|v| v as f32).collect()),
        Some(gls.into_iter().map(|v| v as f32).collect()),
    ]
}
