//! Bayer mosaics, their packed 4-plane form, level normalization and the
//! naive colour conversions used by the colour loss and ΔE.

mod color;
pub mod pgm;

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{dim_err, Error, Result};

pub use color::{lab_from_xyz, rgb_to_lab, xyz_from_linear_rgb, LabImage, D65_WHITE, SRGB_TO_XYZ};

/// Colour-filter layout of the top-left 2×2 cell, listed row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    pub const ALL: [BayerPattern; 4] = [
        BayerPattern::Rggb,
        BayerPattern::Bggr,
        BayerPattern::Grbg,
        BayerPattern::Gbrg,
    ];

    /// Cell offsets `(dy, dx)` of the canonical planes `[R, G1, G2, B]`.
    /// G1 is the green sharing a row with red.
    pub fn offsets(self) -> [(usize, usize); 4] {
        match self {
            BayerPattern::Rggb => [(0, 0), (0, 1), (1, 0), (1, 1)],
            BayerPattern::Bggr => [(1, 1), (1, 0), (0, 1), (0, 0)],
            BayerPattern::Grbg => [(0, 1), (0, 0), (1, 1), (1, 0)],
            BayerPattern::Gbrg => [(1, 0), (1, 1), (0, 0), (0, 1)],
        }
    }
}

impl std::str::FromStr for BayerPattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(BayerPattern::Rggb),
            "BGGR" => Ok(BayerPattern::Bggr),
            "GRBG" => Ok(BayerPattern::Grbg),
            "GBRG" => Ok(BayerPattern::Gbrg),
            other => Err(Error::Parameter(format!("unknown Bayer pattern `{other}`"))),
        }
    }
}

/// Sensor levels carried alongside a mosaic (the JSON sidecar of a PGM).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMeta {
    pub pattern: BayerPattern,
    pub black_level: u16,
    pub white_level: u16,
    pub bit_depth: u32,
}

impl RawMeta {
    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::Validation(format!("bit depth {} outside 1..=16", self.bit_depth)));
        }
        if self.black_level >= self.white_level {
            return Err(Error::Validation(format!(
                "black level {} must be below white level {}",
                self.black_level, self.white_level
            )));
        }
        if u32::from(self.white_level) > self.max_dn() {
            return Err(Error::Validation(format!(
                "white level {} exceeds {}-bit range",
                self.white_level, self.bit_depth
            )));
        }
        Ok(())
    }

    pub fn max_dn(&self) -> u32 {
        (1u32 << self.bit_depth) - 1
    }
}

/// A single-plane colour-filter-array image in digital numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct BayerImage {
    width: usize,
    height: usize,
    data: Vec<u16>,
    meta: RawMeta,
}

impl BayerImage {
    pub fn new(width: usize, height: usize, data: Vec<u16>, meta: RawMeta) -> Result<Self> {
        meta.validate()?;
        if !width.is_multiple_of(2) || !height.is_multiple_of(2) || width == 0 || height == 0 {
            return dim_err(format!("Bayer mosaic must have even, non-zero dims, got {width}x{height}"));
        }
        if data.len() != width * height {
            return dim_err(format!("mosaic {width}x{height} needs {} samples, got {}", width * height, data.len()));
        }
        let max = meta.max_dn();
        if let Some(v) = data.iter().find(|&&v| u32::from(v) > max) {
            return Err(Error::Validation(format!("sample {v} exceeds {}-bit range", meta.bit_depth)));
        }
        Ok(BayerImage { width, height, data, meta })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[u16] {
        &self.data
    }
    pub fn meta(&self) -> RawMeta {
        self.meta
    }
    pub fn pattern(&self) -> BayerPattern {
        self.meta.pattern
    }
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }
}

/// Four half-resolution planes `[R, G1, G2, B]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedRaw {
    pub planes: Tensor<f32>,
    /// Multiplier currently applied relative to scene-linear values.
    pub exposure_scale: f64,
}

impl PackedRaw {
    pub fn new(planes: Tensor<f32>, exposure_scale: f64) -> Result<Self> {
        if planes.channels() != 4 {
            return dim_err(format!("packed raw needs 4 planes, got {}", planes.channels()));
        }
        Ok(PackedRaw { planes, exposure_scale })
    }

    /// Builds a packed raw from scene-linear planes (`exposure_scale = 1`).
    pub fn linear(planes: Tensor<f32>) -> Result<Self> {
        Self::new(planes, 1.0)
    }

    pub fn height(&self) -> usize {
        self.planes.height()
    }
    pub fn width(&self) -> usize {
        self.planes.width()
    }
}

/// Rearranges the mosaic into canonical `[R, G1, G2, B]` planes.
pub fn pack_bayer(raw: &BayerImage) -> PackedRaw {
    let offs = raw.pattern().offsets();
    let planes = Tensor::from_fn([4, raw.height / 2, raw.width / 2], |c, i, j| {
        let (dy, dx) = offs[c];
        raw.get(2 * i + dy, 2 * j + dx) as f32
    });
    PackedRaw { planes, exposure_scale: 1.0 }
}

/// Inverse of [`pack_bayer`]. Values are rounded to the nearest DN and must
/// fit the bit depth in `meta`.
pub fn unpack_bayer(packed: &PackedRaw, meta: RawMeta) -> Result<BayerImage> {
    meta.validate()?;
    let (h2, w2) = (packed.height(), packed.width());
    let (h, w) = (2 * h2, 2 * w2);
    let offs = meta.pattern.offsets();
    let max = meta.max_dn() as f32;
    let mut data = vec![0u16; h * w];
    for (c, &(dy, dx)) in offs.iter().enumerate() {
        let plane = packed.planes.channel(c);
        for i in 0..h2 {
            for j in 0..w2 {
                let v = plane[i * w2 + j].round();
                if !(0.0..=max).contains(&v) {
                    return Err(Error::Validation(format!(
                        "packed value {v} outside 0..={max} at plane {c} ({i}, {j})"
                    )));
                }
                data[(2 * i + dy) * w + 2 * j + dx] = v as u16;
            }
        }
    }
    BayerImage::new(w, h, data, meta)
}

/// Black-level subtraction and scaling so that `white_level` maps to 1.
/// Values below black clamp to 0; nothing is clamped above.
pub fn normalize_levels(raw: &BayerImage) -> PackedRaw {
    let black = f64::from(raw.meta.black_level);
    let range = f64::from(raw.meta.white_level) - black;
    let packed = pack_bayer(raw);
    PackedRaw {
        planes: packed
            .planes
            .map(|v| ((f64::from(v) - black) / range).max(0.0) as f32),
        exposure_scale: 1.0,
    }
}

/// Three scene-linear planes `[R, G, B]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<f64>; 3],
}

impl RgbImage {
    pub fn pixel(&self, idx: usize) -> [f64; 3] {
        [self.planes[0][idx], self.planes[1][idx], self.planes[2][idx]]
    }
    pub fn len(&self) -> usize {
        self.width * self.height
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `R`, mean of both greens, `B`. No demosaicing or white balance.
pub fn naive_rgb(planes: &Tensor<f32>) -> Result<RgbImage> {
    if planes.channels() != 4 {
        return dim_err(format!("naive RGB needs 4 packed planes, got {}", planes.channels()));
    }
    let r = planes.channel(0).iter().map(|&v| f64::from(v)).collect();
    let g = planes
        .channel(1)
        .iter()
        .zip(planes.channel(2))
        .map(|(&a, &b)| (f64::from(a) + f64::from(b)) / 2.0)
        .collect();
    let b = planes.channel(3).iter().map(|&v| f64::from(v)).collect();
    Ok(RgbImage {
        width: planes.width(),
        height: planes.height(),
        planes: [r, g, b],
    })
}
