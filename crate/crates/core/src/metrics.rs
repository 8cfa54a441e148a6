//! Fidelity metrics: MSE/PSNR, single-scale SSIM and MS-SSIM. All math in
//! f64 over CHW pixel buffers; the learned-feature metrics live in the
//! features module.

use serde::Serialize;

use crate::error::{Error, Result};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub lpips: f64,
    pub feature_l2: f64,
    pub bpp: f64,
}

impl QualityReport {
    pub fn new(mse: f64, max_val: f64, ms_ssim: f64, lpips: f64, feature_l2: f64, bpp: f64) -> QualityReport {
        QualityReport {
            mse,
            psnr_db: psnr_from_mse(mse, max_val),
            ms_ssim,
            lpips,
            feature_l2,
            bpp,
        }
    }
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "mse over {} vs {} values",
            a.len(),
            b.len()
        )));
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

pub fn psnr(a: &[f32], b: &[f32], max_val: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, max_val))
}

/// Eq.-style SSIM value from window statistics; the two factors are the
/// luminance term and the contrast/structure term.
pub fn ssim_from_stats(
    mu1: f64,
    mu2: f64,
    var1: f64,
    var2: f64,
    cov: f64,
    k1: f64,
    k2: f64,
    l: f64,
) -> (f64, f64) {
    let c1 = (k1 * l) * (k1 * l);
    let c2 = (k2 * l) * (k2 * l);
    let lum = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1);
    let cs = (2.0 * cov + c2) / (var1 + var2 + c2);
    (lum, cs)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode filter; shrinks each spatial dim by SSIM_WINDOW-1.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let mut rows = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * p[y * w + x + i];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean luminance and contrast/structure terms over all windows of all
/// channels at one scale.
fn ssim_terms(a: &[f32], b: &[f32], c: usize, h: usize, w: usize, l: f64) -> Result<(f64, f64)> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than the ssim window",
            h, w
        )));
    }
    let k = gaussian_kernel();
    let plane = h * w;
    let mut lum_sum = 0.0;
    let mut cs_sum = 0.0;
    let mut count = 0usize;
    for ci in 0..c {
        let pa: Vec<f64> = a[ci * plane..(ci + 1) * plane].iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b[ci * plane..(ci + 1) * plane].iter().map(|&v| v as f64).collect();
        let sq_a: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let sq_b: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu1 = filter_valid(&pa, h, w, &k);
        let mu2 = filter_valid(&pb, h, w, &k);
        let m11 = filter_valid(&sq_a, h, w, &k);
        let m22 = filter_valid(&sq_b, h, w, &k);
        let m12 = filter_valid(&ab, h, w, &k);
        for i in 0..mu1.len() {
            let var1 = m11[i] - mu1[i] * mu1[i];
            let var2 = m22[i] - mu2[i] * mu2[i];
            let cov = m12[i] - mu1[i] * mu2[i];
            let (lum, cs) = ssim_from_stats(mu1[i], mu2[i], var1, var2, cov, SSIM_K1, SSIM_K2, l);
            lum_sum += lum;
            cs_sum += cs;
            count += 1;
        }
    }
    Ok((lum_sum / count as f64, cs_sum / count as f64))
}

/// Single-scale SSIM index (mean of per-window luminance * cs).
pub fn ssim(a: &[f32], b: &[f32], c: usize, h: usize, w: usize, l: f64) -> Result<f64> {
    check_dims(a, b, c, h, w)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than the ssim window",
            h, w
        )));
    }
    let k = gaussian_kernel();
    let plane = h * w;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ci in 0..c {
        let pa: Vec<f64> = a[ci * plane..(ci + 1) * plane].iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b[ci * plane..(ci + 1) * plane].iter().map(|&v| v as f64).collect();
        let sq_a: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let sq_b: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu1 = filter_valid(&pa, h, w, &k);
        let mu2 = filter_valid(&pb, h, w, &k);
        let m11 = filter_valid(&sq_a, h, w, &k);
        let m22 = filter_valid(&sq_b, h, w, &k);
        let m12 = filter_valid(&ab, h, w, &k);
        for i in 0..mu1.len() {
            let var1 = m11[i] - mu1[i] * mu1[i];
            let var2 = m22[i] - mu2[i] * mu2[i];
            let cov = m12[i] - mu1[i] * mu2[i];
            let (lum, cs) = ssim_from_stats(mu1[i], mu2[i], var1, var2, cov, SSIM_K1, SSIM_K2, l);
            sum += lum * cs;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

fn check_dims(a: &[f32], b: &[f32], c: usize, h: usize, w: usize) -> Result<()> {
    if a.len() != c * h * w || b.len() != c * h * w {
        return Err(Error::Shape(format!(
            "buffers of {} and {} values for a {}x{}x{} image",
            a.len(),
            b.len(),
            c,
            h,
            w
        )));
    }
    Ok(())
}

fn avg_pool2(p: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ci * h * w + 2 * y * w + 2 * x;
                out[(ci * oh + y) * ow + x] =
                    0.25 * (p[base] + p[base + 1] + p[base + w] + p[base + w + 1]);
            }
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM: up to 5 scales with 2x average pooling between them,
/// contrast/structure at every scale, luminance only at the coarsest.
/// Scales that no longer fit the window are dropped and the remaining
/// exponent weights renormalized.
pub fn ms_ssim(a: &[f32], b: &[f32], c: usize, h: usize, w: usize, l: f64) -> Result<f64> {
    check_dims(a, b, c, h, w)?;
    let mut n_scales = 0;
    for m in 1..=MS_SSIM_WEIGHTS.len() {
        if (h.min(w) >> (m - 1)) >= SSIM_WINDOW {
            n_scales = m;
        }
    }
    if n_scales == 0 {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than the ssim window",
            h, w
        )));
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..n_scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..n_scales].iter().map(|v| v / wsum).collect();

    let (mut pa, mut pb) = (a.to_vec(), b.to_vec());
    let (mut ch, mut cw) = (h, w);
    let mut score = 1.0f64;
    for (scale, &weight) in weights.iter().enumerate() {
        let (lum, cs) = ssim_terms(&pa, &pb, c, ch, cw, l)?;
        // negative covariance windows can drag a mean below zero; clamp
        // before the fractional exponent
        score *= cs.max(0.0).powf(weight);
        if scale == weights.len() - 1 {
            score *= lum.max(0.0).powf(weight);
        } else {
            let (na, nh, nw) = avg_pool2(&pa, c, ch, cw);
            let (nb, _, _) = avg_pool2(&pb, c, ch, cw);
            pa = na;
            pb = nb;
            ch = nh;
            cw = nw;
        }
    }
    Ok(score)
}
