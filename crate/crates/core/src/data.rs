//! Image I/O, tiling, and the slide-level train/test split. Images are
//! 3xHxW f32 in [0,1]; sources are 8-bit PNG or binary PPM (P6). Tiling is
//! interior-only (partial edge tiles dropped) so counts match floor
//! division of the image dims.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::Reader;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    /// CHW, three channels.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Image> {
        if h == 0 || w == 0 || data.len() != 3 * h * w {
            return Err(Error::Shape(format!(
                "image buffer of {} values does not fit 3x{h}x{w}",
                data.len()
            )));
        }
        Ok(Image { h, w, data })
    }

    fn from_rgb8(h: usize, w: usize, rgb: &[u8]) -> Image {
        let plane = h * w;
        let mut data = vec![0.0f32; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                data[c * plane + i] = rgb[3 * i + c] as f32 / 255.0;
            }
        }
        Image { h, w, data }
    }

    /// Interleaved 8-bit RGB, round-half-up from [0,1].
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.h * self.w;
        let mut out = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                out[3 * i + c] = (self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        out
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P6") {
        return load_ppm(&bytes);
    }
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return load_png(&bytes);
    }
    Err(Error::Format(format!(
        "{} is neither PNG nor binary PPM",
        path.display()
    )))
}

fn load_png(bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG decode: {e}")))?;
    use image::DynamicImage::*;
    match img {
        ImageLuma8(_) | ImageLumaA8(_) | ImageRgb8(_) | ImageRgba8(_) => {
            let rgb = img.to_rgb8();
            Ok(Image::from_rgb8(
                rgb.height() as usize,
                rgb.width() as usize,
                rgb.as_raw(),
            ))
        }
        other => Err(Error::Format(format!(
            "only 8-bit images are supported, got {:?}",
            other.color()
        ))),
    }
}

fn load_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 2usize; // past "P6"
    let mut field = |ctx: &'static str| -> Result<usize> {
        // whitespace and # comments may separate header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                _ => return Err(Error::Format(format!("PPM header ends before {ctx}"))),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad PPM {ctx}")))
    };
    let w = field("width")?;
    let h = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only 8-bit PPM (maxval 255) is supported, got {maxval}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::Format("PPM with zero dimension".into()));
    }
    pos += 1; // single whitespace after maxval
    let mut r = Reader::new(bytes.get(pos..).unwrap_or(&[]), "PPM pixel data");
    let rgb = r.take(3 * h * w)?;
    Ok(Image::from_rgb8(h, w, rgb))
}

/// Writes PNG or binary PPM depending on the file extension.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let rgb = img.to_rgb8();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "png" => image::save_buffer_with_format(
            path,
            &rgb,
            img.w as u32,
            img.h as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Format(format!("PNG encode: {e}"))),
        "ppm" => {
            let mut f = std::fs::File::create(path)?;
            write!(f, "P6\n{} {}\n255\n", img.w, img.h)?;
            f.write_all(&rgb)?;
            Ok(())
        }
        other => Err(Error::Format(format!(
            "unsupported output extension {other:?}, use .png or .ppm"
        ))),
    }
}

/// Top-left corner of a tile, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileCoord {
    pub x: usize,
    pub y: usize,
}

/// Raster-order grid of interior tiles; partial edge tiles are dropped.
pub fn tile_grid(h: usize, w: usize, tile: usize, stride: usize) -> Result<Vec<TileCoord>> {
    if tile == 0 || stride == 0 {
        return Err(Error::Data("tile size and stride must be positive".into()));
    }
    if tile > h || tile > w {
        return Err(Error::Shape(format!(
            "tile size {tile} exceeds image dims {h}x{w}"
        )));
    }
    let ny = (h - tile) / stride + 1;
    let nx = (w - tile) / stride + 1;
    let mut out = Vec::with_capacity(ny * nx);
    for iy in 0..ny {
        for ix in 0..nx {
            out.push(TileCoord { x: ix * stride, y: iy * stride });
        }
    }
    Ok(out)
}

pub fn extract_tile(img: &Image, at: TileCoord, tile: usize) -> Result<Vec<f32>> {
    if at.y + tile > img.h || at.x + tile > img.w {
        return Err(Error::Shape(format!(
            "tile at ({}, {}) spills outside {}x{}",
            at.x, at.y, img.h, img.w
        )));
    }
    let mut out = Vec::with_capacity(3 * tile * tile);
    for c in 0..3 {
        let plane = &img.data[c * img.h * img.w..(c + 1) * img.h * img.w];
        for y in at.y..at.y + tile {
            out.extend_from_slice(&plane[y * img.w + at.x..y * img.w + at.x + tile]);
        }
    }
    Ok(out)
}

pub fn tile_image(img: &Image, tile: usize, stride: usize) -> Result<Vec<(TileCoord, Vec<f32>)>> {
    tile_grid(img.h, img.w, tile, stride)?
        .into_iter()
        .map(|c| Ok((c, extract_tile(img, c, tile)?)))
        .collect()
}

/// One source image and the tiles cut from it. Several records may share a
/// slide id; the split assigns whole slides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    /// Side length the coords were cut at.
    pub tile: usize,
    #[serde(default)]
    pub tiles: Vec<TileCoord>,
}

impl SlideRecord {
    /// Tiles must sit fully inside the image and not overlap each other.
    pub fn validate(&self) -> Result<()> {
        let tile = self.tile;
        for t in &self.tiles {
            if t.x + tile > self.width || t.y + tile > self.height {
                return Err(Error::Data(format!(
                    "slide {}: tile at ({}, {}) leaves the {}x{} image",
                    self.slide_id, t.x, t.y, self.width, self.height
                )));
            }
        }
        for (i, a) in self.tiles.iter().enumerate() {
            for b in &self.tiles[i + 1..] {
                if a.x.abs_diff(b.x) < tile && a.y.abs_diff(b.y) < tile {
                    return Err(Error::Data(format!(
                        "slide {}: tiles at ({}, {}) and ({}, {}) overlap",
                        self.slide_id, a.x, a.y, b.x, b.y
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileRef {
    pub slide_id: String,
    pub path: PathBuf,
    pub coord: TileCoord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileSet {
    pub label: SplitLabel,
    /// Tile side length shared by every reference.
    pub tile: usize,
    pub tiles: Vec<TileRef>,
}

impl TileSet {
    pub fn slide_ids(&self) -> std::collections::BTreeSet<&str> {
        self.tiles.iter().map(|t| t.slide_id.as_str()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("tile set: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TileSet> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("tile set: {e}")))
    }
}

/// Hard leakage check: no slide id on both sides.
pub fn check_no_leakage(train: &TileSet, test: &TileSet) -> Result<()> {
    let tr = train.slide_ids();
    for id in test.slide_ids() {
        if tr.contains(id) {
            return Err(Error::Data(format!("slide {id} appears in both splits")));
        }
    }
    Ok(())
}

fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Slide-level split: slides ordered by a seeded hash of their id, the first
/// round(n * test_fraction) become the test side (clamped so both sides are
/// nonempty). Whole slides move together, so tiles never leak.
pub fn split_slides(
    records: &[SlideRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(TileSet, TileSet)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Data(format!(
            "test fraction must be in [0, 1], got {test_fraction}"
        )));
    }
    let mut by_slide: BTreeMap<&str, Vec<&SlideRecord>> = BTreeMap::new();
    let mut tile = 0usize;
    for r in records {
        if tile == 0 {
            tile = r.tile;
        } else if r.tile != tile {
            return Err(Error::Data(format!(
                "records tiled at different sizes ({tile} vs {})",
                r.tile
            )));
        }
        by_slide.entry(&r.slide_id).or_default().push(r);
    }
    let n = by_slide.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 distinct slides to split, got {n}"
        )));
    }

    let mut order: Vec<&str> = by_slide.keys().copied().collect();
    order.sort_by_key(|id| (fnv1a64(&[&seed.to_le_bytes(), id.as_bytes()]), *id));
    let k = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);

    let mut train = TileSet { label: SplitLabel::Train, tile, tiles: Vec::new() };
    let mut test = TileSet { label: SplitLabel::Test, tile, tiles: Vec::new() };
    for (i, id) in order.iter().enumerate() {
        let dst = if i < k { &mut test } else { &mut train };
        for rec in &by_slide[id] {
            for &coord in &rec.tiles {
                dst.tiles.push(TileRef {
                    slide_id: rec.slide_id.clone(),
                    path: rec.path.clone(),
                    coord,
                });
            }
        }
    }
    Ok((train, test))
}

/// Corpus manifest: one record per line.
pub fn write_manifest(path: &Path, records: &[SlideRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        let line =
            serde_json::to_string(r).map_err(|e| Error::Data(format!("manifest record: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<SlideRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| {
            Error::Format(format!("manifest line {}: {e}", i + 1))
        })?);
    }
    Ok(out)
}
