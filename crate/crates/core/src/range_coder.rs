//! Byte-wise range coder over 16-bit quantized CDFs, with a small bypass
//! path for raw bits. Encoder and decoder walk the same state sequence, so
//! losslessness is structural; a 16-bit checksum of the symbol indices is
//! coded at the end of every stream to make wrong-table or corrupted-byte
//! decodes fail loudly instead of returning garbage.

use crate::error::{Error, Result};
use crate::prior::{CdfTable, CDF_TOTAL};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> RangeEncoder {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut b = self.cache;
            loop {
                self.out.push(b.wrapping_add(carry));
                b = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    /// Code one symbol occupying [cum, cum + freq) of the 2^16 total.
    pub fn encode_span(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= CDF_TOTAL);
        let r = self.range >> 16;
        self.low += (r as u64) * (cum as u64);
        self.range = r * freq;
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    /// Raw bits, most significant first, at one bit of range each.
    pub fn encode_bits(&mut self, v: u32, nbits: u32) {
        debug_assert!(nbits <= 32);
        for i in (0..nbits).rev() {
            self.range >>= 1;
            if (v >> i) & 1 == 1 {
                self.low += self.range as u64;
            }
            while self.range < TOP {
                self.shift_low();
                self.range <<= 8;
            }
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<RangeDecoder<'a>> {
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            bytes,
            pos: 0,
        };
        // first byte is the encoder's initial cache, always zero
        for _ in 0..5 {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | b as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        if self.pos >= self.bytes.len() {
            return Err(Error::Truncated {
                need: 1,
                context: "range-coded payload",
            });
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    /// Cumulative position of the next symbol; pass the table's span back
    /// through `consume` to advance.
    pub fn peek_cum(&self) -> u32 {
        let r = self.range >> 16;
        (self.code / r).min(CDF_TOTAL - 1)
    }

    pub fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        let r = self.range >> 16;
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_bits(&mut self, nbits: u32) -> Result<u32> {
        debug_assert!(nbits <= 32);
        let mut v = 0u32;
        for _ in 0..nbits {
            self.range >>= 1;
            let bit = self.code >= self.range;
            if bit {
                self.code -= self.range;
            }
            v = (v << 1) | bit as u32;
            while self.range < TOP {
                self.code = (self.code << 8) | self.next_byte()? as u32;
                self.range <<= 8;
            }
        }
        Ok(v)
    }
}

fn symbol_checksum(indices: &[u16]) -> u16 {
    let mut h = crc32fast::Hasher::new();
    for &i in indices {
        h.update(&i.to_le_bytes());
    }
    (h.finalize() & 0xFFFF) as u16
}

/// Encode a channel-major latent (`plane` values per channel, one CdfTable
/// per channel) into a self-checking byte payload.
pub fn range_encode(latent: &[i32], plane: usize, tables: &[CdfTable]) -> Result<Vec<u8>> {
    if latent.len() != plane * tables.len() {
        return Err(Error::Shape(format!(
            "{} latent values for {} channels x {} plane",
            latent.len(),
            tables.len(),
            plane
        )));
    }
    let mut enc = RangeEncoder::new();
    let mut indices = Vec::with_capacity(latent.len());
    for (c, t) in tables.iter().enumerate() {
        for &q in &latent[c * plane..(c + 1) * plane] {
            if !t.contains(q) {
                return Err(Error::SymbolRange {
                    channel: c,
                    value: q as i64,
                    lo: t.q_min as i64,
                    hi: t.q_max as i64,
                });
            }
            let sym = t.sym_index(q);
            let (cum, freq) = t.span(sym);
            enc.encode_span(cum, freq);
            indices.push(sym as u16);
        }
    }
    enc.encode_bits(symbol_checksum(&indices) as u32, 16);
    Ok(enc.finish())
}

/// Inverse of `range_encode`; rejects streams whose symbol checksum does
/// not match (corrupted payload or mismatched tables).
pub fn range_decode(bytes: &[u8], plane: usize, tables: &[CdfTable]) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(plane * tables.len());
    let mut indices = Vec::with_capacity(plane * tables.len());
    for t in tables {
        for _ in 0..plane {
            let cum = dec.peek_cum();
            let sym = t.symbol_at(cum);
            let (lo, freq) = t.span(sym);
            dec.consume(lo, freq)?;
            indices.push(sym as u16);
            out.push(t.q_min + sym as i32);
        }
    }
    let want = dec.decode_bits(16)? as u16;
    let got = symbol_checksum(&indices);
    if want != got {
        return Err(Error::Corrupt(format!(
            "symbol checksum mismatch ({:04x} in stream, {:04x} decoded)",
            want, got
        )));
    }
    Ok(out)
}

/// Ideal table-coded size of a latent, in bits.
pub fn table_rate_bits(latent: &[i32], plane: usize, tables: &[CdfTable]) -> Result<f64> {
    if latent.len() != plane * tables.len() {
        return Err(Error::Shape("latent/table geometry mismatch".into()));
    }
    let mut bits = 0.0;
    for (c, t) in tables.iter().enumerate() {
        for &q in &latent[c * plane..(c + 1) * plane] {
            if !t.contains(q) {
                return Err(Error::SymbolRange {
                    channel: c,
                    value: q as i64,
                    lo: t.q_min as i64,
                    hi: t.q_max as i64,
                });
            }
            bits += t.bits_for(t.sym_index(q));
        }
    }
    Ok(bits)
}
