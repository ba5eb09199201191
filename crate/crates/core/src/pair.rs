//! Short/long exposure pair synthesis from two clean, quasi-static raws.
//!
//! For an exposure ratio `r` and a 12-bit full scale `M = 4095`:
//!
//! ```text
//! I1' = clean1 · M · r            I2' = clean2 · M · r
//! long  = clip(I1',     0, M) / M   (+ long-exposure noise)
//! short = clip(I2' / r, 0, M) / M   (+ short-exposure noise)
//! gt    = I2' / (M · r)  = clean2
//! ```
//!
//! Both LDR frames are then brought to the short-exposure (scene-linear)
//! brightness: the long frame is divided by `r`, the short frame and the
//! ground truth are left unchanged. Static, unsaturated, noise-free pixels
//! therefore agree bit for bit across all three outputs.
//!
//! All intermediate arithmetic is done in `f64`; the products above are exact
//! for `f32` inputs so the alignment identity survives the final rounding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::par;
use crate::raw::PackedRaw;
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};
use crate::sensor::{add_noise_planes, ExposureLabel, NoiseModel};

pub const DEFAULT_RATIOS: [u32; 3] = [4, 8, 16];
pub const DEFAULT_BIT_DEPTH: u32 = 12;

/// Rectangle side range, in packed pixels, for synthetic motion.
pub const MOTION_SIZE: (usize, usize) = (40, 60);
/// Displacement range, in packed pixels, for synthetic motion.
pub const MOTION_OFFSET: (i64, i64) = (-30, 30);
/// Smallest patch on which motion is synthesized.
pub const MIN_MOTION_PATCH: usize = 128;

fn default_ratios() -> Vec<u32> {
    DEFAULT_RATIOS.to_vec()
}
fn default_bit_depth() -> u32 {
    DEFAULT_BIT_DEPTH
}
fn default_long() -> NoiseModel {
    NoiseModel::default_long()
}
fn default_short() -> NoiseModel {
    NoiseModel::default_short()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    /// Fixed exposure ratio; drawn uniformly from `allowed_ratios` when unset.
    #[serde(default)]
    pub ratio: Option<u32>,
    #[serde(default = "default_ratios")]
    pub allowed_ratios: Vec<u32>,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: u32,
    #[serde(default = "default_long")]
    pub noise_long: NoiseModel,
    #[serde(default = "default_short")]
    pub noise_short: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            ratio: None,
            allowed_ratios: default_ratios(),
            bit_depth: DEFAULT_BIT_DEPTH,
            noise_long: NoiseModel::default_long(),
            noise_short: NoiseModel::default_short(),
            seed: 0,
        }
    }
}

impl PairConfig {
    /// Default configuration with both noise models switched off.
    pub fn noiseless() -> Self {
        PairConfig {
            noise_long: NoiseModel::noiseless(ExposureLabel::Long),
            noise_short: NoiseModel::noiseless(ExposureLabel::Short),
            ..Default::default()
        }
    }

    pub fn with_ratio(mut self, r: u32) -> Self {
        self.ratio = Some(r);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_dn(&self) -> f64 {
        ((1u64 << self.bit_depth) - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::Parameter(format!("bit depth {} outside 1..=16", self.bit_depth)));
        }
        if self.allowed_ratios.is_empty() {
            return Err(Error::Parameter("allowed ratio set is empty".into()));
        }
        if let Some(r) = self.allowed_ratios.iter().find(|&&r| r < 2) {
            return Err(Error::Parameter(format!("exposure ratio {r} must be >= 2")));
        }
        self.noise_long.validate()?;
        self.noise_short.validate()
    }

    /// Draws a ratio uniformly from the allowed set using the ratio stream.
    pub fn draw_ratio(&self) -> u32 {
        let mut rng = rng_from_seed(derive_seed(self.seed, stream::RATIO));
        self.allowed_ratios[rng.random_range(0..self.allowed_ratios.len())]
    }

    /// The configured ratio, or a drawn one.
    pub fn resolve_ratio(&self) -> Result<u32> {
        self.validate()?;
        let r = self.ratio.unwrap_or_else(|| self.draw_ratio());
        if r < 2 {
            return Err(Error::Parameter(format!("exposure ratio {r} must be >= 2")));
        }
        if !self.allowed_ratios.contains(&r) {
            log::warn!("exposure ratio {r} is outside the allowed set {:?}", self.allowed_ratios);
        }
        Ok(r)
    }
}

/// Where a rectangle of the long frame was copied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionSpec {
    /// Source top-left column.
    pub x: usize,
    /// Source top-left row.
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub dx: i64,
    pub dy: i64,
}

impl MotionSpec {
    pub fn destination(&self) -> (i64, i64) {
        (self.x as i64 + self.dx, self.y as i64 + self.dy)
    }

    /// Both rectangles must lie inside an `h×w` patch.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let (dx0, dy0) = self.destination();
        let fits = |x: i64, y: i64| {
            x >= 0 && y >= 0 && x as usize + self.width <= w && y as usize + self.height <= h
        };
        if self.width == 0 || self.height == 0 || !fits(self.x as i64, self.y as i64) || !fits(dx0, dy0) {
            return dim_err(format!("motion {self:?} does not fit a {h}x{w} patch"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    /// Noisy long exposure, aligned to the short-exposure brightness.
    pub long: PackedRaw,
    /// Noisy short exposure.
    pub short: PackedRaw,
    /// Noise-free ground truth.
    pub gt: PackedRaw,
    /// Binary motion mask `[1, H, W]`, present for training quadruplets.
    pub mask: Option<Tensor<f32>>,
    pub ratio: u32,
    pub motion: Option<MotionSpec>,
    /// Long-exposure values that hit the clip level.
    pub long_clipped: usize,
}

fn check_clean(name: &str, p: &PackedRaw) -> Result<()> {
    if let Some(v) = p.planes.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Validation(format!("{name} contains invalid value {v}")));
    }
    Ok(())
}

fn to_packed(shape: [usize; 3], values: Vec<f64>) -> Result<PackedRaw> {
    PackedRaw::linear(Tensor::from_vec(shape, values.into_iter().map(|v| v as f32).collect())?)
}

/// Runs the exposure pipeline on one pair of clean normalized raws.
pub fn form_pair(clean1: &PackedRaw, clean2: &PackedRaw, cfg: &PairConfig) -> Result<PairSample> {
    if clean1.planes.shape() != clean2.planes.shape() {
        return dim_err(format!(
            "clean inputs differ in shape: {:?} vs {:?}",
            clean1.planes.shape(),
            clean2.planes.shape()
        ));
    }
    check_clean("clean1", clean1)?;
    check_clean("clean2", clean2)?;
    let r = cfg.resolve_ratio()?;
    let rf = f64::from(r);
    let max = cfg.max_dn();
    let scale = max * rf;
    let shape = clean1.planes.shape();
    let plane_len = clean1.planes.plane_len();

    let mut long_clipped = 0usize;
    let mut long: Vec<f64> = clean1
        .planes
        .data()
        .iter()
        .map(|&c| {
            let v = f64::from(c) * scale;
            if v >= max {
                long_clipped += 1;
            }
            v.clamp(0.0, max) / max
        })
        .collect();
    let mut short: Vec<f64> = clean2
        .planes
        .data()
        .iter()
        .map(|&c| (f64::from(c) * scale / rf).clamp(0.0, max) / max)
        .collect();
    let gt: Vec<f64> = clean2.planes.data().iter().map(|&c| f64::from(c) * scale / scale).collect();

    add_noise_planes(&mut long, plane_len, &cfg.noise_long, derive_seed(cfg.seed, stream::LONG_NOISE));
    add_noise_planes(&mut short, plane_len, &cfg.noise_short, derive_seed(cfg.seed, stream::SHORT_NOISE));
    long.iter_mut().for_each(|v| *v /= rf);

    Ok(PairSample {
        long: to_packed(shape, long)?,
        short: to_packed(shape, short)?,
        gt: to_packed(shape, gt)?,
        mask: None,
        ratio: r,
        motion: None,
        long_clipped,
    })
}

/// Draws a motion rectangle and displacement that fit an `h×w` patch.
pub fn sample_motion_spec(h: usize, w: usize, rng: &mut Rng) -> Result<MotionSpec> {
    if h < MIN_MOTION_PATCH || w < MIN_MOTION_PATCH {
        return dim_err(format!(
            "patch {h}x{w} is smaller than the {MIN_MOTION_PATCH}x{MIN_MOTION_PATCH} needed for motion synthesis"
        ));
    }
    let width = rng.random_range(MOTION_SIZE.0..=MOTION_SIZE.1);
    let height = rng.random_range(MOTION_SIZE.0..=MOTION_SIZE.1);
    let dx = rng.random_range(MOTION_OFFSET.0..=MOTION_OFFSET.1);
    let dy = rng.random_range(MOTION_OFFSET.0..=MOTION_OFFSET.1);
    let x_lo = (-dx).max(0) as usize;
    let x_hi = w - width - dx.max(0) as usize;
    let y_lo = (-dy).max(0) as usize;
    let y_hi = h - height - dy.max(0) as usize;
    let spec = MotionSpec {
        x: rng.random_range(x_lo..=x_hi),
        y: rng.random_range(y_lo..=y_hi),
        width,
        height,
        dx,
        dy,
    };
    debug_assert!(spec.validate(h, w).is_ok());
    Ok(spec)
}

/// Copies the source rectangle onto its destination (destination pixels are
/// overwritten, the source keeps its content) and marks both rectangles in
/// a `[1, H, W]` mask.
pub fn apply_motion(patch: &PackedRaw, spec: &MotionSpec) -> Result<(PackedRaw, Tensor<f32>)> {
    let (h, w) = (patch.height(), patch.width());
    spec.validate(h, w)?;
    let (x1, y1) = spec.destination();
    let (x1, y1) = (x1 as usize, y1 as usize);
    let mut moved = patch.clone();
    let mut mask = Tensor::zeros([1, h, w]);
    for c in 0..patch.planes.channels() {
        for r in 0..spec.height {
            for col in 0..spec.width {
                let v = patch.planes.get(c, spec.y + r, spec.x + col);
                moved.planes.set(c, y1 + r, x1 + col, v);
            }
        }
    }
    for r in 0..spec.height {
        for col in 0..spec.width {
            mask.set(0, spec.y + r, spec.x + col, 1.0);
            mask.set(0, y1 + r, x1 + col, 1.0);
        }
    }
    Ok((moved, mask))
}

/// Synthetic object motion on a long-exposure patch.
pub fn synth_motion(long_patch: &PackedRaw, seed: u64) -> Result<(PackedRaw, Tensor<f32>, MotionSpec)> {
    let mut rng = rng_from_seed(seed);
    let spec = sample_motion_spec(long_patch.height(), long_patch.width(), &mut rng)?;
    let (moved, mask) = apply_motion(long_patch, &spec)?;
    Ok((moved, mask, spec))
}

/// Training quadruplet: [`form_pair`] followed by [`synth_motion`] on the
/// aligned long frame. Short frame and ground truth are not touched.
pub fn build_quadruplet(clean1: &PackedRaw, clean2: &PackedRaw, cfg: &PairConfig) -> Result<PairSample> {
    let mut sample = form_pair(clean1, clean2, cfg)?;
    let (moved, mask, spec) = synth_motion(&sample.long, derive_seed(cfg.seed, stream::MOTION))?;
    sample.long = moved;
    sample.mask = Some(mask);
    sample.motion = Some(spec);
    Ok(sample)
}

/// Builds quadruplets for many input pairs. Item `i` runs with seed
/// `derive_seed(cfg.seed, BATCH_BASE + i)`, so results do not depend on
/// scheduling.
pub fn build_quadruplets(pairs: &[(PackedRaw, PackedRaw)], cfg: &PairConfig) -> Result<Vec<PairSample>> {
    par::map_range(pairs.len(), |i| {
        let item_cfg = cfg.clone().with_seed(derive_seed(cfg.seed, stream::BATCH_BASE + i as u64));
        build_quadruplet(&pairs[i].0, &pairs[i].1, &item_cfg)
    })
    .into_iter()
    .collect()
}

/// Number of tiles along one axis.
pub fn tile_count(extent: usize, size: usize, stride: usize) -> usize {
    if size > extent || stride == 0 {
        0
    } else {
        (extent - size) / stride + 1
    }
}

/// Tiles a sample into `size×size` patches on a `stride` grid. The grid's
/// origin is jittered within the leftover margin using `seed`; the number of
/// patches does not depend on the seed.
pub fn extract_patches(sample: &PairSample, size: usize, stride: usize, seed: u64) -> Result<Vec<PairSample>> {
    let (h, w) = (sample.gt.height(), sample.gt.width());
    if size == 0 || stride == 0 {
        return Err(Error::Parameter("patch size and stride must be positive".into()));
    }
    if size > h || size > w {
        return dim_err(format!("patch size {size} exceeds sample {h}x{w}"));
    }
    let (ny, nx) = (tile_count(h, size, stride), tile_count(w, size, stride));
    let mut rng = rng_from_seed(derive_seed(seed, stream::PATCHES));
    let oy = rng.random_range(0..=h - size - stride * (ny - 1));
    let ox = rng.random_range(0..=w - size - stride * (nx - 1));
    let crop = |p: &PackedRaw, y: usize, x: usize| -> Result<PackedRaw> {
        PackedRaw::new(p.planes.crop(y, x, size, size)?, p.exposure_scale)
    };
    let mut out = Vec::with_capacity(ny * nx);
    for ty in 0..ny {
        for tx in 0..nx {
            let (y, x) = (oy + ty * stride, ox + tx * stride);
            out.push(PairSample {
                long: crop(&sample.long, y, x)?,
                short: crop(&sample.short, y, x)?,
                gt: crop(&sample.gt, y, x)?,
                mask: sample.mask.as_ref().map(|m| m.crop(y, x, size, size)).transpose()?,
                ratio: sample.ratio,
                motion: None,
                long_clipped: 0,
            });
        }
    }
    Ok(out)
}
