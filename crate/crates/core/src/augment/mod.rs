//! RandAugment: `n` transforms drawn uniformly with replacement from a fixed
//! set of 16, applied in order at one shared magnitude on a 0..=30 scale.
//!
//! Magnitude-to-parameter mapping (level = magnitude / 30; `±` means the sign is
//! drawn per application):
//!
//! | transform    | parameter                                  | m = 0      | m = 30        |
//! |--------------|--------------------------------------------|------------|---------------|
//! | AutoContrast | none                                       |            |               |
//! | Equalize     | none                                       |            |               |
//! | Invert       | none                                       |            |               |
//! | Rotate       | angle ±30·level degrees                    | 0°         | ±30°          |
//! | Color        | saturation factor 1 ± 0.9·level            | 1.0        | 0.1 / 1.9     |
//! | Posterize    | kept bits 8 − round(4·level)               | 8          | 4             |
//! | Solarize     | invert pixels ≥ 256 − 256·level            | 256 (none) | 0 (all)       |
//! | SolarizeAdd  | add round(110·level) to pixels < 128       | 0          | 110           |
//! | Contrast     | factor 1 ± 0.9·level                       | 1.0        | 0.1 / 1.9     |
//! | Brightness   | factor 1 ± 0.9·level                       | 1.0        | 0.1 / 1.9     |
//! | Sharpness    | factor 1 ± 0.9·level                       | 1.0        | 0.1 / 1.9     |
//! | ShearX/Y     | shear ±0.3·level                           | 0          | ±0.3          |
//! | CutoutAbs    | square side 0.4·level·min(w, h)            | 0 px       | 40% of side   |
//! | TranslateX/Y | shift ±0.45·level·(width or height)        | 0 px       | ±45%          |
//!
//! Geometric transforms fill uncovered pixels with gray 128. The cutout square is
//! centered at a uniformly drawn pixel, clipped at the border and filled with
//! the ImageNet mean color.

mod ops;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_MAGNITUDE: u8 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    AutoContrast,
    Equalize,
    Invert,
    Rotate,
    Color,
    Posterize,
    Solarize,
    SolarizeAdd,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    CutoutAbs,
    TranslateX,
    TranslateY,
}

impl TransformKind {
    pub const ALL: [TransformKind; 16] = [
        TransformKind::AutoContrast,
        TransformKind::Equalize,
        TransformKind::Invert,
        TransformKind::Rotate,
        TransformKind::Color,
        TransformKind::Posterize,
        TransformKind::Solarize,
        TransformKind::SolarizeAdd,
        TransformKind::Contrast,
        TransformKind::Brightness,
        TransformKind::Sharpness,
        TransformKind::ShearX,
        TransformKind::ShearY,
        TransformKind::CutoutAbs,
        TransformKind::TranslateX,
        TransformKind::TranslateY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::AutoContrast => "AutoContrast",
            TransformKind::Equalize => "Equalize",
            TransformKind::Invert => "Invert",
            TransformKind::Rotate => "Rotate",
            TransformKind::Color => "Color",
            TransformKind::Posterize => "Posterize",
            TransformKind::Solarize => "Solarize",
            TransformKind::SolarizeAdd => "SolarizeAdd",
            TransformKind::Contrast => "Contrast",
            TransformKind::Brightness => "Brightness",
            TransformKind::Sharpness => "Sharpness",
            TransformKind::ShearX => "ShearX",
            TransformKind::ShearY => "ShearY",
            TransformKind::CutoutAbs => "CutoutAbs",
            TransformKind::TranslateX => "TranslateX",
            TransformKind::TranslateY => "TranslateY",
        }
    }

    /// Whether the parameter takes a random sign.
    pub fn is_signed(self) -> bool {
        matches!(
            self,
            TransformKind::Rotate
                | TransformKind::Color
                | TransformKind::Contrast
                | TransformKind::Brightness
                | TransformKind::Sharpness
                | TransformKind::ShearX
                | TransformKind::ShearY
                | TransformKind::TranslateX
                | TransformKind::TranslateY
        )
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown transform {s:?}")))
    }
}

/// Applies one transform. `rng` supplies the sign of signed parameters and the
/// cutout position; other transforms do not consume it.
pub fn transform<R: Rng + ?Sized>(
    kind: TransformKind,
    magnitude: u8,
    image: &RgbImage,
    rng: &mut R,
) -> Result<RgbImage> {
    if magnitude > MAX_MAGNITUDE {
        return Err(Error::invalid(format!("magnitude {magnitude} outside 0..=30")));
    }
    let level = f64::from(magnitude) / f64::from(MAX_MAGNITUDE);
    let sign = if kind.is_signed() && rng.random_bool(0.5) { -1.0 } else { 1.0 };
    let factor = 1.0 + sign * 0.9 * level;
    let (w, h) = image.dimensions();
    Ok(match kind {
        TransformKind::AutoContrast => ops::autocontrast(image),
        TransformKind::Equalize => ops::equalize(image),
        TransformKind::Invert => ops::map_lut(image, |v| 255 - v),
        TransformKind::Rotate => ops::rotate(image, sign * 30.0 * level),
        TransformKind::Color => ops::color(image, factor),
        TransformKind::Posterize => {
            let bits = 8 - (4.0 * level).round() as u32;
            let mask = (0xFFu32 << (8 - bits)) as u8;
            ops::map_lut(image, |v| v & mask)
        }
        TransformKind::Solarize => {
            let threshold = (256.0 - 256.0 * level).round() as u16;
            ops::map_lut(image, |v| if u16::from(v) >= threshold { 255 - v } else { v })
        }
        TransformKind::SolarizeAdd => {
            let add = (110.0 * level).round() as u16;
            ops::map_lut(image, |v| if v < 128 { (u16::from(v) + add).min(255) as u8 } else { v })
        }
        TransformKind::Contrast => ops::contrast(image, factor),
        TransformKind::Brightness => ops::brightness(image, factor),
        TransformKind::Sharpness => ops::sharpness(image, factor),
        TransformKind::ShearX => ops::affine(image, [1.0, sign * 0.3 * level, 0.0, 0.0, 1.0, 0.0]),
        TransformKind::ShearY => ops::affine(image, [1.0, 0.0, 0.0, sign * 0.3 * level, 1.0, 0.0]),
        TransformKind::CutoutAbs => {
            let side = (0.4 * level * f64::from(w.min(h))).round() as u32;
            let center = (rng.random_range(0..w.max(1)), rng.random_range(0..h.max(1)));
            ops::cutout(image, side, center)
        }
        TransformKind::TranslateX => {
            ops::affine(image, [1.0, 0.0, sign * 0.45 * level * f64::from(w), 0.0, 1.0, 0.0])
        }
        TransformKind::TranslateY => {
            ops::affine(image, [1.0, 0.0, 0.0, 0.0, 1.0, sign * 0.45 * level * f64::from(h)])
        }
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Transforms applied per image.
    pub n: usize,
    /// Shared magnitude, 0..=30.
    pub m: u8,
    pub transforms: Vec<TransformKind>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy::new(5, 12).unwrap()
    }
}

impl AugmentPolicy {
    pub fn new(n: usize, m: u8) -> Result<Self> {
        Self::with_transforms(n, m, TransformKind::ALL.to_vec())
    }

    pub fn with_transforms(n: usize, m: u8, transforms: Vec<TransformKind>) -> Result<Self> {
        if m > MAX_MAGNITUDE {
            return Err(Error::invalid(format!("magnitude {m} outside 0..=30")));
        }
        if transforms.is_empty() {
            return Err(Error::invalid("empty transform set"));
        }
        Ok(AugmentPolicy { n, m, transforms })
    }

    /// Draws `n` transforms uniformly with replacement, then applies them in
    /// the drawn order. A pure function of (policy, image, rng state).
    pub fn apply<R: Rng + ?Sized>(&self, image: &RgbImage, rng: &mut R) -> RgbImage {
        self.apply_traced(image, rng).0
    }

    /// Like [`apply`](Self::apply), also returning the transforms used.
    pub fn apply_traced<R: Rng + ?Sized>(
        &self,
        image: &RgbImage,
        rng: &mut R,
    ) -> (RgbImage, Vec<TransformKind>) {
        let kinds: Vec<TransformKind> = (0..self.n)
            .map(|_| self.transforms[rng.random_range(0..self.transforms.len())])
            .collect();
        let mut out = image.clone();
        for kind in &kinds {
            out = transform(*kind, self.m, &out, rng).expect("policy magnitude validated");
        }
        (out, kinds)
    }
}
