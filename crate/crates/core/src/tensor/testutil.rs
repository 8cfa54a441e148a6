//! f64 reference implementations and finite-difference helpers shared by the
//! tensor unit tests. References are written the direct way (loop nests,
//! sigmoid differences) so they share no code with the production paths.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(r: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn max_rel_err(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&a, &b)| rel_err(a as f64, b))
        .fold(0.0, f64::max)
}

/// Max abs error normalized by the reference's overall scale; robust where
/// individual outputs sit near zero.
pub fn scaled_err(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    got.iter()
        .zip(want)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Central differences of a scalar f64 function, one parameter group at a
/// time. `point` is cloned and perturbed element by element.
pub fn fd_grad64(f: &mut dyn FnMut(&[Vec<f64>]) -> f64, point: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let mut p: Vec<Vec<f64>> = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for gi in 0..point.len() {
        let mut g = vec![0.0; point[gi].len()];
        for ei in 0..point[gi].len() {
            let orig = p[gi][ei];
            p[gi][ei] = orig + h;
            let fp = f(&p);
            p[gi][ei] = orig - h;
            let fm = f(&p);
            p[gi][ei] = orig;
            g[ei] = (fp - fm) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// 6-loop direct conv, f64.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref64(
    x: &[f64],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    kern: &[f64],
    co: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for ni in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * ci + ic) * h + iy as usize) * w + ix as usize];
                                let kv = kern[((oc * ci + ic) * k + ky) * k + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((ni * co + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Direct transposed conv by scattering each input sample, f64.
#[allow(clippy::too_many_arguments)]
pub fn deconv2d_ref64(
    x: &[f64],
    n: usize,
    co: usize,
    h: usize,
    w: usize,
    kern: &[f64],
    ci: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let oh = (h - 1) * s + k - 2 * p;
    let ow = (w - 1) * s + k - 2 * p;
    let mut out = vec![0.0; n * ci * oh * ow];
    for ni in 0..n {
        for oc in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let xv = x[((ni * co + oc) * h + y) * w + xx];
                    for ic in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let ty = (y * s + ky) as isize - p as isize;
                                let tx = (xx * s + kx) as isize - p as isize;
                                if ty < 0 || tx < 0 || ty >= oh as isize || tx >= ow as isize {
                                    continue;
                                }
                                out[((ni * ci + ic) * oh + ty as usize) * ow + tx as usize] +=
                                    xv * kern[((oc * ci + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Direct GDN/IGDN with the raw reparameterization, f64.
pub fn gdn_ref64(
    x: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    beta_raw: &[f64],
    gamma_raw: &[f64],
    inverse: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for pos in 0..hw {
            for i in 0..c {
                let mut z = beta_raw[i] * beta_raw[i] + 1e-6;
                for j in 0..c {
                    let g = gamma_raw[i * c + j];
                    let xj = x[(ni * c + j) * hw + pos];
                    z += g * g * xj * xj;
                }
                let t = if inverse { z.sqrt() } else { 1.0 / z.sqrt() };
                out[(ni * c + i) * hw + pos] = x[(ni * c + i) * hw + pos] * t;
            }
        }
    }
    out
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Rate reference via the sigmoid difference (the production path uses the
/// tanh identity, so agreement cross-checks both).
pub fn logistic_rate_ref64(y: &[f64], c: usize, hw: usize, mu: &[f64], ls: &[f64]) -> f64 {
    let n = y.len() / (c * hw);
    let mut bits = 0.0;
    for ni in 0..n {
        for ci in 0..c {
            let scale = ls[ci].exp();
            for k in 0..hw {
                let v = y[(ni * c + ci) * hw + k];
                let p = sigmoid((v - mu[ci] + 0.5) / scale) - sigmoid((v - mu[ci] - 0.5) / scale);
                bits -= p.max(super::ops::P_MIN).log2();
            }
        }
    }
    bits
}

pub fn l2_rows_ref64(a: &[f64], b: &[f64], n: usize, c: usize) -> f64 {
    let mut total = 0.0;
    for ni in 0..n {
        let mut s = 0.0;
        for k in 0..c {
            let d = a[ni * c + k] - b[ni * c + k];
            s += d * d;
        }
        total += s.sqrt();
    }
    total / n as f64
}
