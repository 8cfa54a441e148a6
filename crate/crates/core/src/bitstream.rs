//! The .pwsc container: a fixed little-endian header, the range-coded
//! payload, and a trailing CRC32 (IEEE) over the payload bytes.

use crate::error::{Error, Result};
use crate::weights::Reader;

pub const MAGIC: &[u8; 4] = b"PWSC";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub fingerprint: u64,
    pub image_h: u32,
    pub image_w: u32,
    pub padded_h: u32,
    pub padded_w: u32,
    pub latent_c: u32,
    pub latent_h: u32,
    pub latent_w: u32,
    /// inclusive quantized range per latent channel
    pub ranges: Vec<(i32, i32)>,
}

impl StreamHeader {
    pub fn byte_len(&self) -> usize {
        4 + 1 + 8 + 4 * 4 + 3 * 4 + 8 * self.ranges.len()
    }
}

pub fn pack(header: &StreamHeader, payload: &[u8]) -> Result<Vec<u8>> {
    if header.ranges.len() != header.latent_c as usize {
        return Err(Error::Shape(format!(
            "{} channel ranges for latent_c {}",
            header.ranges.len(),
            header.latent_c
        )));
    }
    let mut out = Vec::with_capacity(header.byte_len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&header.fingerprint.to_le_bytes());
    for v in [
        header.image_h,
        header.image_w,
        header.padded_h,
        header.padded_w,
        header.latent_c,
        header.latent_h,
        header.latent_w,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &(lo, hi) in &header.ranges {
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
    }
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    Ok(out)
}

pub fn unpack(bytes: &[u8]) -> Result<(StreamHeader, &[u8])> {
    let mut r = Reader::new(bytes, "PWSC stream");
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format("not a PWSC stream".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported stream version {} (expected {})",
            version, VERSION
        )));
    }
    let fingerprint = r.u64()?;
    let image_h = r.u32()?;
    let image_w = r.u32()?;
    let padded_h = r.u32()?;
    let padded_w = r.u32()?;
    let latent_c = r.u32()?;
    let latent_h = r.u32()?;
    let latent_w = r.u32()?;
    let mut ranges = Vec::with_capacity(latent_c as usize);
    for _ in 0..latent_c {
        let lo = r.i32()?;
        let hi = r.i32()?;
        if lo > hi {
            return Err(Error::Corrupt(format!(
                "channel range [{}, {}] is inverted",
                lo, hi
            )));
        }
        ranges.push((lo, hi));
    }
    if r.remaining() < 4 {
        return Err(Error::Truncated {
            need: 4 - r.remaining(),
            context: "payload CRC32",
        });
    }
    let payload = r.take(r.remaining() - 4)?;
    let stored = r.u32()?;
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "payload CRC32 mismatch (stored {:08x}, computed {:08x})",
            stored, actual
        )));
    }
    Ok((
        StreamHeader {
            fingerprint,
            image_h,
            image_w,
            padded_h,
            padded_w,
            latent_c,
            latent_h,
            latent_w,
            ranges,
        },
        payload,
    ))
}

/// Bits per pixel of a complete stream, counting every byte in the file.
pub fn bpp(total_bytes: usize, image_h: u32, image_w: u32) -> f64 {
    8.0 * total_bytes as f64 / (image_h as f64 * image_w as f64)
}

/// Bytes the container wraps around the entropy payload: header plus the
/// trailing CRC. Lets rate cross-checks isolate the coded payload.
pub fn container_overhead(latent_c: usize) -> usize {
    4 + 1 + 8 + 4 * 4 + 3 * 4 + 8 * latent_c + 4
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> StreamHeader {
        StreamHeader {
            fingerprint: 0xDEAD_BEEF_CAFE_F00D,
            image_h: 224,
            image_w: 224,
            padded_h: 224,
            padded_w: 224,
            latent_c: 3,
            latent_h: 28,
            latent_w: 28,
            ranges: vec![(-4, 7), (0, 0), (-31, 12)],
        }
    }

    #[test]
    fn pack_unpack_identity() {
        let h = header();
        let payload = vec![0x42u8; 97];
        let bytes = pack(&h, &payload).unwrap();
        assert_eq!(bytes.len(), h.byte_len() + payload.len() + 4);
        assert_eq!(bytes.len(), container_overhead(3) + payload.len());
        let (back, p) = unpack(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(p, &payload[..]);
    }

    #[test]
    fn empty_payload_round_trips() {
        let h = header();
        let bytes = pack(&h, &[]).unwrap();
        let (back, p) = unpack(&bytes).unwrap();
        assert_eq!(back, h);
        assert!(p.is_empty());
    }

    #[test]
    fn future_version_rejected() {
        let h = header();
        let mut bytes = pack(&h, &[1, 2, 3]).unwrap();
        bytes[4] = 2;
        match unpack(&bytes) {
            Err(Error::Format(msg)) => assert!(msg.contains("version 2"), "{}", msg),
            other => panic!("wanted Format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let h = header();
        let mut bytes = pack(&h, &[]).unwrap();
        bytes[0] = b'Q';
        assert!(matches!(unpack(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn payload_flip_fails_crc() {
        let h = header();
        let payload: Vec<u8> = (0..60).collect();
        let bytes = pack(&h, &payload).unwrap();
        let payload_start = h.byte_len();
        for off in [0, 30, 59] {
            let mut bad = bytes.clone();
            bad[payload_start + off] ^= 0x01;
            match unpack(&bad) {
                Err(Error::Corrupt(msg)) => assert!(msg.contains("CRC32"), "{}", msg),
                other => panic!("wanted Corrupt, got {:?}", other.map(|_| ())),
            }
        }
    }

    #[test]
    fn truncation_reported() {
        let h = header();
        let bytes = pack(&h, &[9u8; 40]).unwrap();
        for keep in [0, 3, 12, h.byte_len() - 1, h.byte_len() + 2] {
            assert!(
                matches!(unpack(&bytes[..keep]), Err(Error::Truncated { .. })),
                "keep {}",
                keep
            );
        }
    }

    #[test]
    fn inverted_range_rejected() {
        let h = header();
        let mut bytes = pack(&h, &[]).unwrap();
        // first range pair sits right after the fixed 41-byte prefix
        bytes[41..45].copy_from_slice(&10i32.to_le_bytes());
        bytes[45..49].copy_from_slice(&(-10i32).to_le_bytes());
        assert!(matches!(unpack(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn bpp_reference_point() {
        assert_eq!(bpp(6272, 224, 224), 1.0);
        assert!((bpp(3136, 224, 224) - 0.5).abs() < 1e-12);
    }
}
