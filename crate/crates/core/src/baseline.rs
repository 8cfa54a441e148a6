//! JPEG-like baseline: BT.601 full-range color transform, 8x8 orthonormal
//! DCT, Annex-K quantization with IJG quality scaling, DC prediction, and
//! range-coded coefficients (magnitude class per zigzag band through
//! adaptive models, sign and mantissa as raw bits). No subsampling, no
//! Huffman: loss comes from quantization alone.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::prior::CdfTable;
use crate::range_coder::{RangeDecoder, RangeEncoder};
use crate::weights::Reader;

pub const PBLK_MAGIC: &[u8; 4] = b"PBLK";
pub const PBLK_VERSION: u8 = 1;

#[rustfmt::skip]
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

#[rustfmt::skip]
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

#[rustfmt::skip]
const ZIGZAG: [usize; 64] = [
     0,  1,  8, 16,  9,  2,  3, 10,
    17, 24, 32, 25, 18, 11,  4,  5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13,  6,  7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
];

// zigzag index -> coding band (DC, then widening AC groups)
fn band_of(zz: usize) -> usize {
    match zz {
        0 => 0,
        1..=2 => 1,
        3..=5 => 2,
        6..=9 => 3,
        10..=14 => 4,
        15..=27 => 5,
        _ => 6,
    }
}
const N_BANDS: usize = 7;
const N_CLASSES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTables {
    pub luma: [u16; 64],
    pub chroma: [u16; 64],
}

/// IJG quality scaling of the base tables.
pub fn quality_scale(q: u32) -> Result<QuantTables> {
    if !(1..=100).contains(&q) {
        return Err(Error::Data(format!("quality {} outside 1..=100", q)));
    }
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let apply = |base: &[u16; 64]| {
        let mut t = [0u16; 64];
        for (o, &b) in t.iter_mut().zip(base) {
            *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
        }
        t
    };
    Ok(QuantTables {
        luma: apply(&LUMA_BASE),
        chroma: apply(&CHROMA_BASE),
    })
}

fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

/// Orthonormal 2D DCT-II of a row-major 8x8 block.
pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0f64; 64];
    for u in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                s += c[u][y] * block[y * 8 + x];
            }
            tmp[u * 8 + x] = s;
        }
    }
    let mut out = [0.0f64; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut s = 0.0;
            for x in 0..8 {
                s += c[v][x] * tmp[u * 8 + x];
            }
            out[u * 8 + v] = s;
        }
    }
    out
}

/// Inverse (DCT-III), exact adjoint of `dct8x8`.
pub fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0f64; 64];
    for y in 0..8 {
        for v in 0..8 {
            let mut s = 0.0;
            for u in 0..8 {
                s += c[u][y] * coef[u * 8 + v];
            }
            tmp[y * 8 + v] = s;
        }
    }
    let mut out = [0.0f64; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                s += c[v][x] * tmp[y * 8 + v];
            }
            out[y * 8 + x] = s;
        }
    }
    out
}

/// Quantized coefficients for one plane: blocks in raster order, each 64
/// values in zigzag order, DC stored raw (prediction happens at the coder).
pub struct PlaneCoeffs {
    pub bh: usize,
    pub bw: usize,
    pub data: Vec<i32>,
}

pub struct ImageCoeffs {
    pub h: usize,
    pub w: usize,
    pub quality: u32,
    pub planes: [PlaneCoeffs; 3],
}

fn rgb_to_ycbcr(px: &[f32], h: usize, w: usize) -> [Vec<f64>; 3] {
    let plane = h * w;
    let mut y = vec![0.0f64; plane];
    let mut cb = vec![0.0f64; plane];
    let mut cr = vec![0.0f64; plane];
    for i in 0..plane {
        let r = px[i] as f64 * 255.0;
        let g = px[plane + i] as f64 * 255.0;
        let b = px[2 * plane + i] as f64 * 255.0;
        y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
        cr[i] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    [y, cb, cr]
}

fn ycbcr_to_rgb(y: &[f64], cb: &[f64], cr: &[f64], plane: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let (yv, cbv, crv) = (y[i], cb[i] - 128.0, cr[i] - 128.0);
        let r = yv + 1.402 * crv;
        let g = yv - 0.344136 * cbv - 0.714136 * crv;
        let b = yv + 1.772 * cbv;
        out[i] = (r / 255.0).clamp(0.0, 1.0) as f32;
        out[plane + i] = (g / 255.0).clamp(0.0, 1.0) as f32;
        out[2 * plane + i] = (b / 255.0).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Forward transform to quantized coefficients; edge blocks replicate the
/// last row/column.
pub fn quantize_image(px: &[f32], h: usize, w: usize, quality: u32) -> Result<ImageCoeffs> {
    if px.len() != 3 * h * w || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "pixel buffer of {} values for {}x{}",
            px.len(),
            h,
            w
        )));
    }
    let tables = quality_scale(quality)?;
    let planes_in = rgb_to_ycbcr(px, h, w);
    let (bh, bw) = (h.div_ceil(8), w.div_ceil(8));
    let planes = std::array::from_fn(|pi| {
        let src = &planes_in[pi];
        let qt = if pi == 0 { &tables.luma } else { &tables.chroma };
        let mut data = Vec::with_capacity(bh * bw * 64);
        let mut block = [0.0f64; 64];
        for by in 0..bh {
            for bx in 0..bw {
                for iy in 0..8 {
                    let sy = (by * 8 + iy).min(h - 1);
                    for ix in 0..8 {
                        let sx = (bx * 8 + ix).min(w - 1);
                        block[iy * 8 + ix] = src[sy * w + sx] - 128.0;
                    }
                }
                let coef = dct8x8(&block);
                for zz in 0..64 {
                    let pos = ZIGZAG[zz];
                    data.push((coef[pos] / qt[pos] as f64).round() as i32);
                }
            }
        }
        PlaneCoeffs { bh, bw, data }
    });
    Ok(ImageCoeffs {
        h,
        w,
        quality,
        planes,
    })
}

/// Dequantize and invert back to RGB pixels.
pub fn reconstruct(c: &ImageCoeffs) -> Result<Vec<f32>> {
    let tables = quality_scale(c.quality)?;
    let (h, w) = (c.h, c.w);
    let mut planes_out: Vec<Vec<f64>> = Vec::with_capacity(3);
    for (pi, pc) in c.planes.iter().enumerate() {
        let qt = if pi == 0 { &tables.luma } else { &tables.chroma };
        if pc.data.len() != pc.bh * pc.bw * 64 || pc.bh != h.div_ceil(8) || pc.bw != w.div_ceil(8) {
            return Err(Error::Corrupt("coefficient plane geometry mismatch".into()));
        }
        let mut plane = vec![0.0f64; h * w];
        let mut coef = [0.0f64; 64];
        for by in 0..pc.bh {
            for bx in 0..pc.bw {
                let base = (by * pc.bw + bx) * 64;
                coef.fill(0.0);
                for zz in 0..64 {
                    let pos = ZIGZAG[zz];
                    coef[pos] = pc.data[base + zz] as f64 * qt[pos] as f64;
                }
                let px = idct8x8(&coef);
                for iy in 0..8 {
                    let sy = by * 8 + iy;
                    if sy >= h {
                        break;
                    }
                    for ix in 0..8 {
                        let sx = bx * 8 + ix;
                        if sx >= w {
                            break;
                        }
                        plane[sy * w + sx] = px[iy * 8 + ix] + 128.0;
                    }
                }
            }
        }
        planes_out.push(plane);
    }
    Ok(ycbcr_to_rgb(&planes_out[0], &planes_out[1], &planes_out[2], h * w))
}

/// Frequency-count model over magnitude classes, identical on both coder
/// sides. Rebuilt into a quantized table per symbol; counts adapt fast and
/// halve on overflow.
struct AdaptiveModel {
    counts: [u32; N_CLASSES],
    total: u32,
}

impl AdaptiveModel {
    fn new() -> AdaptiveModel {
        AdaptiveModel {
            counts: [1; N_CLASSES],
            total: N_CLASSES as u32,
        }
    }

    fn table(&self) -> CdfTable {
        let pmf: Vec<f64> = self
            .counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect();
        CdfTable::from_pmf(0, 0, &pmf).unwrap()
    }

    fn bump(&mut self, sym: usize) {
        self.counts[sym] += 24;
        self.total += 24;
        if self.total >= 1 << 13 {
            self.total = 0;
            for c in &mut self.counts {
                *c = (*c + 1) / 2;
                self.total += *c;
            }
        }
    }
}

fn magnitude_class(v: i32) -> usize {
    let a = v.unsigned_abs();
    (32 - a.leading_zeros()) as usize
}

struct CoeffModels {
    // [plane_kind][band], plane kind 0 = luma, 1 = chroma
    models: Vec<AdaptiveModel>,
}

impl CoeffModels {
    fn new() -> CoeffModels {
        CoeffModels {
            models: (0..2 * N_BANDS).map(|_| AdaptiveModel::new()).collect(),
        }
    }

    fn at(&mut self, kind: usize, band: usize) -> &mut AdaptiveModel {
        &mut self.models[kind * N_BANDS + band]
    }
}

fn encode_plane(enc: &mut RangeEncoder, models: &mut CoeffModels, kind: usize, pc: &PlaneCoeffs) -> Result<()> {
    let mut prev_dc = 0i32;
    for b in 0..pc.bh * pc.bw {
        for zz in 0..64 {
            let raw = pc.data[b * 64 + zz];
            let v = if zz == 0 {
                let d = raw - prev_dc;
                prev_dc = raw;
                d
            } else {
                raw
            };
            let class = magnitude_class(v);
            if class >= N_CLASSES {
                return Err(Error::Data(format!("coefficient {} out of coding range", v)));
            }
            let model = models.at(kind, band_of(zz));
            let t = model.table();
            let (cum, freq) = t.span(class);
            enc.encode_span(cum, freq);
            model.bump(class);
            if class > 0 {
                enc.encode_bits((v < 0) as u32, 1);
                let mantissa = v.unsigned_abs() - (1 << (class - 1));
                if class > 1 {
                    enc.encode_bits(mantissa, class as u32 - 1);
                }
            }
        }
    }
    Ok(())
}

fn decode_plane(
    dec: &mut RangeDecoder,
    models: &mut CoeffModels,
    kind: usize,
    bh: usize,
    bw: usize,
) -> Result<PlaneCoeffs> {
    let mut data = Vec::with_capacity(bh * bw * 64);
    let mut prev_dc = 0i32;
    for _ in 0..bh * bw {
        for zz in 0..64 {
            let model = models.at(kind, band_of(zz));
            let t = model.table();
            let class = t.symbol_at(dec.peek_cum());
            let (cum, freq) = t.span(class);
            dec.consume(cum, freq)?;
            model.bump(class);
            let v = if class == 0 {
                0
            } else {
                let neg = dec.decode_bits(1)? == 1;
                let mantissa = if class > 1 { dec.decode_bits(class as u32 - 1)? } else { 0 };
                let mag = (1u32 << (class - 1)) + mantissa;
                if neg {
                    -(mag as i32)
                } else {
                    mag as i32
                }
            };
            if zz == 0 {
                prev_dc += v;
                data.push(prev_dc);
            } else {
                data.push(v);
            }
        }
    }
    Ok(PlaneCoeffs { bh, bw, data })
}

pub fn coeffs_to_stream(c: &ImageCoeffs) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    let mut models = CoeffModels::new();
    for (pi, pc) in c.planes.iter().enumerate() {
        encode_plane(&mut enc, &mut models, (pi > 0) as usize, pc)?;
    }
    let payload = enc.finish();
    let mut out = Vec::with_capacity(14 + payload.len() + 4);
    out.extend_from_slice(PBLK_MAGIC);
    out.push(PBLK_VERSION);
    out.extend_from_slice(&(c.h as u32).to_le_bytes());
    out.extend_from_slice(&(c.w as u32).to_le_bytes());
    out.push(c.quality as u8);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn stream_to_coeffs(bytes: &[u8]) -> Result<ImageCoeffs> {
    let mut r = Reader::new(bytes, "PBLK stream");
    if r.take(4)? != PBLK_MAGIC {
        return Err(Error::Format("not a PBLK stream".into()));
    }
    let version = r.u8()?;
    if version != PBLK_VERSION {
        return Err(Error::Format(format!("unsupported PBLK version {}", version)));
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let quality = r.u8()? as u32;
    if h == 0 || w == 0 || !(1..=100).contains(&quality) {
        return Err(Error::Corrupt("PBLK header out of range".into()));
    }
    if r.remaining() < 4 {
        return Err(Error::Truncated {
            need: 4 - r.remaining(),
            context: "PBLK stream",
        });
    }
    let payload = r.take(r.remaining() - 4)?;
    let stored = r.u32()?;
    if stored != crc32fast::hash(payload) {
        return Err(Error::Corrupt("PBLK payload CRC32 mismatch".into()));
    }
    let (bh, bw) = (h.div_ceil(8), w.div_ceil(8));
    let mut dec = RangeDecoder::new(payload)?;
    let mut models = CoeffModels::new();
    let y = decode_plane(&mut dec, &mut models, 0, bh, bw)?;
    let cb = decode_plane(&mut dec, &mut models, 1, bh, bw)?;
    let cr = decode_plane(&mut dec, &mut models, 1, bh, bw)?;
    Ok(ImageCoeffs {
        h,
        w,
        quality,
        planes: [y, cb, cr],
    })
}

/// RGB tile ([0,1] CHW) to a complete .pblk stream.
pub fn block_encode(px: &[f32], h: usize, w: usize, quality: u32) -> Result<Vec<u8>> {
    coeffs_to_stream(&quantize_image(px, h, w, quality)?)
}

/// .pblk stream back to pixels.
pub fn block_decode(bytes: &[u8]) -> Result<(Vec<f32>, usize, usize)> {
    let coeffs = stream_to_coeffs(bytes)?;
    Ok((reconstruct(&coeffs)?, coeffs.h, coeffs.w))
}
