//! Controlled distortions for metric sensitivity studies: a chromatic bias
//! applied in Lab space and blocking artifacts from the baseline codec.

use serde::{Deserialize, Serialize};

use crate::baseline;
use crate::color;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    ColorShift,
    Blocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: f64,
}

impl DistortionSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DistortionKind::ColorShift => {
                if !(0.0..=50.0).contains(&self.level) {
                    return Err(Error::Data(format!(
                        "color_shift bias {} outside [0, 50]",
                        self.level
                    )));
                }
            }
            DistortionKind::Blocking => {
                if self.level.fract() != 0.0 || !(10.0..=90.0).contains(&self.level) {
                    return Err(Error::Data(format!(
                        "blocking quality {} outside 10..=90",
                        self.level
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, px: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
        self.validate()?;
        match self.kind {
            DistortionKind::ColorShift => color_shift(px, h, w, self.level),
            DistortionKind::Blocking => blocking(px, h, w, self.level as u32),
        }
    }
}

/// Add `bias` to the a* channel in Lab space, then convert back (gamut
/// clamped).
pub fn color_shift(px: &[f32], h: usize, w: usize, bias: f64) -> Result<Vec<f32>> {
    if !(0.0..=50.0).contains(&bias) {
        return Err(Error::Data(format!("color bias {} outside [0, 50]", bias)));
    }
    if px.len() != 3 * h * w {
        return Err(Error::Shape("pixel buffer does not match dims".into()));
    }
    let mut lab = color::srgb_to_lab(px, h, w);
    for p in &mut lab {
        p.1 += bias;
    }
    Ok(color::lab_to_srgb(&lab, h, w))
}

/// One trip through the baseline codec at the given quality.
pub fn blocking(px: &[f32], h: usize, w: usize, quality: u32) -> Result<Vec<f32>> {
    if !(10..=90).contains(&quality) {
        return Err(Error::Data(format!(
            "blocking quality {} outside 10..=90",
            quality
        )));
    }
    let bytes = baseline::block_encode(px, h, w, quality)?;
    let (out, _, _) = baseline::block_decode(&bytes)?;
    Ok(out)
}
