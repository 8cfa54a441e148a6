//! PWGT weight container: named f32 tensors in a flat little-endian file
//! with an FNV-1a trailer. Shared by codec model bundles and the feature
//! extractor.
//!
//! Layout: magic "PWGT", version u8 (=1), u32 tensor count, then per tensor
//! u16 name length, UTF-8 name, u8 rank, u32 per dim, raw f32 payload;
//! finally the 8-byte FNV-1a hash of everything before it.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PWGT";
const VERSION: u8 = 1;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub struct WeightTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of named tensors; order is part of the byte layout,
/// so save -> load -> save round-trips bit-exactly.
#[derive(Default)]
pub struct WeightFile {
    tensors: Vec<WeightTensor>,
}

impl WeightFile {
    pub fn new() -> WeightFile {
        WeightFile::default()
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {}: shape {:?} vs {} values",
                name,
                shape,
                data.len()
            )));
        }
        if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(Error::Data(format!("tensor {}: name or rank too large", name)));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Data(format!("duplicate tensor name {}", name)));
        }
        self.tensors.push(WeightTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensors(&self) -> &[WeightTensor] {
        &self.tensors
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let h = fnv1a64(&out);
        out.extend_from_slice(&h.to_le_bytes());
        out
    }

    /// Hash of the serialized content (what the trailer stores).
    pub fn content_hash(&self) -> u64 {
        let bytes = self.to_bytes();
        fnv1a64(&bytes[..bytes.len() - 8])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<WeightFile> {
        let mut r = Reader::new(bytes, "weight file");
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format("not a PWGT weight file".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("PWGT version {} unsupported", version)));
        }
        let count = r.u32()? as usize;
        let mut wf = WeightFile::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| {
                Error::Corrupt(format!("tensor {} dims overflow", name))
            })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            wf.push(&name, &shape, data)
                .map_err(|_| Error::Corrupt(format!("duplicate tensor name {}", name)))?;
        }
        let body_end = r.pos();
        let stored = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if r.pos() != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after weight file hash",
                bytes.len() - r.pos()
            )));
        }
        let actual = fnv1a64(&bytes[..body_end]);
        if stored != actual {
            return Err(Error::Corrupt(format!(
                "weight file hash mismatch: stored {:016x}, computed {:016x}",
                stored, actual
            )));
        }
        Ok(wf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<WeightFile> {
        WeightFile::from_bytes(&std::fs::read(path)?)
    }
}

/// Bounds-checked little-endian cursor used by the binary formats here and
/// in the bitstream module.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], context: &'static str) -> Reader<'a> {
        Reader {
            bytes,
            pos: 0,
            context,
        }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                need: n - self.remaining(),
                context: self.context,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
