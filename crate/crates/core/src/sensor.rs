//! Linear CMOS response and heteroscedastic noise synthesis.
//!
//! The photo-electric model is
//!
//! ```text
//! D = (K_a · T · S̄ · A · q · E + V_offset) / η · K_d
//! ```
//!
//! with `q` folding the spectral integral into a per-pixel coefficient. With
//! no offset the response is linear, so scaling the exposure time `T` by `r`
//! is indistinguishable from scaling the digital gain `K_d` by `r`. The pair
//! synthesizer relies on exactly that equivalence.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::par;
use crate::raw::PackedRaw;
use crate::rng::{derive_seed, rng_from_seed};

/// Constants of the photo-electric response. Units are noted per field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    /// Analog gain, dimensionless.
    pub analog_gain: f64,
    /// Digital gain, dimensionless.
    pub digital_gain: f64,
    /// Exposure (integration) time in seconds.
    pub exposure_time: f64,
    /// Mean spatial response of a photosite, dimensionless.
    pub spatial_response: f64,
    /// Effective photosite area in m².
    pub area: f64,
    /// Collected charge per unit of folded spectral irradiance,
    /// electrons per (W·s·m⁻²).
    pub charge_coeff: f64,
    /// Bias voltage in volts.
    pub offset_voltage: f64,
    /// Quantization step in volts per DN.
    pub quant_step: f64,
}

impl SensorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("analog_gain", self.analog_gain),
            ("digital_gain", self.digital_gain),
            ("exposure_time", self.exposure_time),
            ("spatial_response", self.spatial_response),
            ("area", self.area),
            ("charge_coeff", self.charge_coeff),
            ("quant_step", self.quant_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.offset_voltage >= 0.0 && self.offset_voltage.is_finite()) {
            return Err(Error::Parameter(format!(
                "offset_voltage must be non-negative, got {}",
                self.offset_voltage
            )));
        }
        Ok(())
    }

    /// Electrons collected for a folded irradiance value.
    pub fn charge(&self, scene_irradiance: f64) -> f64 {
        self.exposure_time * self.spatial_response * self.area * self.charge_coeff * scene_irradiance
    }
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            analog_gain: 1.0,
            digital_gain: 1.0,
            exposure_time: 0.01,
            spatial_response: 1.0,
            area: 1.0,
            charge_coeff: 1.0,
            offset_voltage: 0.0,
            quant_step: 1.0,
        }
    }
}

/// Digital number produced for one pixel.
pub fn sensor_response(scene_irradiance: f64, params: &SensorParams) -> Result<f64> {
    params.validate()?;
    if !(scene_irradiance >= 0.0 && scene_irradiance.is_finite()) {
        return Err(Error::Parameter(format!(
            "scene irradiance must be finite and non-negative, got {scene_irradiance}"
        )));
    }
    let q = params.charge(scene_irradiance);
    Ok((params.analog_gain * q + params.offset_voltage) / params.quant_step * params.digital_gain)
}

/// Applies [`sensor_response`] to every pixel of a plane stack.
pub fn sensor_response_map(scene: &Tensor<f64>, params: &SensorParams) -> Result<Tensor<f64>> {
    params.validate()?;
    if let Some(v) = scene.data().iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Parameter(format!("scene irradiance {v} is invalid")));
    }
    let gain = params.analog_gain / params.quant_step * params.digital_gain;
    let offset = params.offset_voltage / params.quant_step * params.digital_gain;
    Ok(scene.map(|e| gain * params.charge(e) + offset))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureLabel {
    Long,
    Short,
}

/// Signal-dependent Gaussian noise, `Var[n] = shot_coeff · x + read_sigma²`,
/// with `x` the clean normalized signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Variance per unit of normalized signal.
    pub shot_coeff: f64,
    /// Signal-independent standard deviation in normalized units.
    pub read_sigma: f64,
    pub label: ExposureLabel,
}

impl NoiseModel {
    /// Surrogate parameters for the long exposure. These are placeholder
    /// values, not a calibration of any particular sensor.
    pub const fn default_long() -> Self {
        NoiseModel { shot_coeff: 0.003, read_sigma: 0.01, label: ExposureLabel::Long }
    }

    /// Surrogate parameters for the short exposure.
    pub const fn default_short() -> Self {
        NoiseModel { shot_coeff: 0.012, read_sigma: 0.04, label: ExposureLabel::Short }
    }

    pub const fn noiseless(label: ExposureLabel) -> Self {
        NoiseModel { shot_coeff: 0.0, read_sigma: 0.0, label }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shot_coeff >= 0.0 && self.shot_coeff.is_finite()) {
            return Err(Error::Parameter(format!("shot_coeff must be >= 0, got {}", self.shot_coeff)));
        }
        if !(self.read_sigma >= 0.0 && self.read_sigma.is_finite()) {
            return Err(Error::Parameter(format!("read_sigma must be >= 0, got {}", self.read_sigma)));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.shot_coeff == 0.0 && self.read_sigma == 0.0
    }

    pub fn variance(&self, x: f64) -> f64 {
        self.shot_coeff * x.max(0.0) + self.read_sigma * self.read_sigma
    }
}

/// Adds noise in place to `planes`, a stack of equally sized planes.
/// Plane `p` draws from its own stream seeded with `derive_seed(seed, p)`.
pub(crate) fn add_noise_planes(values: &mut [f64], plane_len: usize, model: &NoiseModel, seed: u64) {
    if model.is_noiseless() || plane_len == 0 {
        return;
    }
    par::for_each_chunk_mut(values, plane_len, |p, plane| {
        let mut rng = rng_from_seed(derive_seed(seed, p as u64));
        for v in plane.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + model.variance(*v).sqrt() * z).max(0.0);
        }
    });
}

/// Returns `clean` with independent heteroscedastic noise added to every
/// value and negatives clamped to zero.
pub fn add_noise(clean: &PackedRaw, model: &NoiseModel, seed: u64) -> Result<PackedRaw> {
    model.validate()?;
    if let Some(v) = clean.planes.data().iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::Validation(format!("clean values must be >= 0, found {v}")));
    }
    let mut values: Vec<f64> = clean.planes.data().iter().map(|&v| f64::from(v)).collect();
    add_noise_planes(&mut values, clean.planes.plane_len(), model, seed);
    let planes = Tensor::from_vec(clean.planes.shape(), values.into_iter().map(|v| v as f32).collect())?;
    Ok(PackedRaw { planes, exposure_scale: clean.exposure_scale })
}
