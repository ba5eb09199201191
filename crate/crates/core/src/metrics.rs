//! Full-reference quality metrics on packed raw tensors.
//!
//! PSNR and (MS-)SSIM run directly on the 4-channel packed domain; ΔE goes
//! through [`naive_rgb`] and CIE L*a*b*.
//!
//! SSIM follows the usual reference setup: an 11-tap Gaussian window with
//! σ = 1.5, `K1 = 0.01`, `K2 = 0.03`, statistics over the valid region only.
//! MS-SSIM uses five scales separated by 2×2 average pooling and the weights
//! `(0.0448, 0.2856, 0.3001, 0.2363, 0.1333)`. Negative contrast-structure
//! terms are clamped to zero before exponentiation so the result stays in
//! `[0, 1]`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::engine::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::par;
use crate::raw::{naive_rgb, rgb_to_lab};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub sigma: f64,
    /// Window half-width; the window has `2 * radius + 1` taps.
    pub radius: usize,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { k1: 0.01, k2: 0.03, sigma: 1.5, radius: 5, data_range: 1.0 }
    }
}

impl SsimParams {
    pub fn taps(&self) -> usize {
        2 * self.radius + 1
    }

    /// Smallest side length MS-SSIM accepts.
    pub fn ms_ssim_min_side(&self) -> usize {
        self.taps() << (MS_SSIM_WEIGHTS.len() - 1)
    }

    fn window(&self) -> Vec<f64> {
        let r = self.radius as f64;
        let mut w: Vec<f64> = (0..self.taps())
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        w
    }
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_channel(t: &Tensor<f32>, c: usize) -> Self {
        Plane { h: t.height(), w: t.width(), data: t.channel(c).iter().map(|&v| f64::from(v)).collect() }
    }

    fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { h: self.h, w: self.w, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// Separable valid-mode filtering.
    fn filter_valid(&self, win: &[f64]) -> Plane {
        let k = win.len();
        let (oh, ow) = (self.h + 1 - k, self.w + 1 - k);
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let src = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = win.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = win.iter().enumerate().map(|(i, a)| a * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { h: oh, w: ow, data: out }
    }

    fn downsample2(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                data.push(0.25 * (self.data[i] + self.data[i + 1] + self.data[i + self.w] + self.data[i + self.w + 1]));
            }
        }
        Plane { h, w, data }
    }
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_cs(x: &Plane, y: &Plane, p: &SsimParams, win: &[f64]) -> (f64, f64) {
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let mu_x = x.filter_valid(win);
    let mu_y = y.filter_valid(win);
    let xx = x.zip_map(x, |a, b| a * b).filter_valid(win);
    let yy = y.zip_map(y, |a, b| a * b).filter_valid(win);
    let xy = x.zip_map(y, |a, b| a * b).filter_valid(win);
    let n = mu_x.data.len() as f64;
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_x.data.len() {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let sxx = xx.data[i] - mx * mx;
        let syy = yy.data[i] - my * my;
        let sxy = xy.data[i] - mx * my;
        let cs = (2.0 * sxy + c2) / (sxx + syy + c2);
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        s_sum += l * cs;
        cs_sum += cs;
    }
    (s_sum / n, cs_sum / n)
}

fn check_pair(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    a.check_same_shape(b)?;
    if a.data().is_empty() {
        return dim_err("metric on an empty tensor");
    }
    Ok(())
}

/// `10·log10(peak² / MSE)` over all channels jointly; `+∞` when equal.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::Parameter(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Channel-averaged mean SSIM.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>, params: &SsimParams) -> Result<f64> {
    check_pair(a, b)?;
    if a.height() < params.taps() || a.width() < params.taps() {
        return dim_err(format!(
            "SSIM needs at least {}x{} pixels, got {}x{}",
            params.taps(),
            params.taps(),
            a.height(),
            a.width()
        ));
    }
    let win = params.window();
    let per_channel = par::map_range(a.channels(), |c| {
        ssim_cs(&Plane::from_channel(a, c), &Plane::from_channel(b, c), params, &win).0
    });
    Ok(per_channel.iter().sum::<f64>() / a.channels() as f64)
}

pub fn ms_ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    ms_ssim_with(a, b, &SsimParams::default())
}

/// Five-scale MS-SSIM, computed per channel and averaged.
pub fn ms_ssim_with(a: &Tensor<f32>, b: &Tensor<f32>, params: &SsimParams) -> Result<f64> {
    check_pair(a, b)?;
    let min = params.ms_ssim_min_side();
    if a.height() < min || a.width() < min {
        return dim_err(format!(
            "MS-SSIM needs at least {min}x{min} pixels, got {}x{}",
            a.height(),
            a.width()
        ));
    }
    let win = params.window();
    let scales = MS_SSIM_WEIGHTS.len();
    let per_channel = par::map_range(a.channels(), |c| {
        let mut x = Plane::from_channel(a, c);
        let mut y = Plane::from_channel(b, c);
        let mut acc = 1.0;
        for (j, &wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (s, cs) = ssim_cs(&x, &y, params, &win);
            if j + 1 < scales {
                acc *= cs.max(0.0).powf(wt);
                x = x.downsample2();
                y = y.downsample2();
            } else {
                acc *= s.max(0.0).powf(wt);
            }
        }
        acc
    });
    Ok(per_channel.iter().sum::<f64>() / a.channels() as f64)
}

/// Mean per-pixel CIE76 colour difference after naive RGB conversion.
pub fn delta_e(out: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    check_pair(out, gt)?;
    let la = rgb_to_lab(&naive_rgb(out)?);
    let lb = rgb_to_lab(&naive_rgb(gt)?);
    let n = out.plane_len();
    let sum: f64 = (0..n)
        .map(|i| {
            let (p, q) = (la.pixel(i), lb.pixel(i));
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(sum / n as f64)
}

mod psnr_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid PSNR value `{s}`"))),
        }
    }
}

/// All metrics for one output/reference pair. An infinite PSNR (identical
/// inputs) is written to JSON as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub delta_e: f64,
}

impl MetricsReport {
    pub fn evaluate(out: &Tensor<f32>, gt: &Tensor<f32>) -> Result<Self> {
        Ok(MetricsReport {
            psnr: psnr(out, gt, 1.0)?,
            ssim: ssim(out, gt, &SsimParams::default())?,
            ms_ssim: ms_ssim(out, gt)?,
            delta_e: delta_e(out, gt)?,
        })
    }

    /// Field-wise arithmetic mean; `None` for an empty slice.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            ms_ssim: avg(|r| r.ms_ssim),
            delta_e: avg(|r| r.delta_e),
        })
    }
}
