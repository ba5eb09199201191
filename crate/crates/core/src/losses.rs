//! Forward-only evaluation of the training objective.
//!
//! Nothing here computes gradients; the functions exist to score imported
//! weights and sanity-check synthesized data.

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::metrics::{mse, ms_ssim};
use crate::raw::naive_rgb;

/// Per-term weights of the total loss. `eta_w` weighs the MS-SSIM term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0, eta_w: 1.0 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, eta_w: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta, gamma, eta_w };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("eta_w", self.eta_w)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_pix: f64,
    pub l_ssim: f64,
    pub l_amss: f64,
    pub l_bayer: f64,
    pub total: f64,
}

/// Root-mean-square error over every element.
pub fn l_pix(out: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    Ok(mse(out, gt)?.sqrt())
}

pub fn l_ssim(out: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    Ok(1.0 - ms_ssim(out, gt)?)
}

/// Checks a `[1, H, W]` mask against an image and that it only holds 0 or 1.
pub fn validate_mask(mask: &Tensor<f32>, img: &Tensor<f32>) -> Result<()> {
    if mask.channels() != 1 || mask.height() != img.height() || mask.width() != img.width() {
        return dim_err(format!(
            "mask shape {:?} does not match image {}x{}",
            mask.shape(),
            img.height(),
            img.width()
        ));
    }
    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation(format!("mask must be binary, found value {v}")));
    }
    Ok(())
}

/// Multiplies every channel by a `[1, H, W]` mask.
pub fn apply_mask(img: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Tensor<f32>> {
    validate_mask(mask, img)?;
    Ok(Tensor::from_fn(img.shape(), |c, y, x| img.get(c, y, x) * mask.get(0, y, x)))
}

/// Masked MS-SSIM loss. An all-zero mask contributes nothing.
pub fn l_amss(out: &Tensor<f32>, gt: &Tensor<f32>, mask: &Tensor<f32>) -> Result<f64> {
    out.check_same_shape(gt)?;
    validate_mask(mask, out)?;
    if mask.data().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    l_ssim(&apply_mask(out, mask)?, &apply_mask(gt, mask)?)
}

/// Mean over pixels of `1 - cos(rgb_out, rgb_gt)`. A pixel where either
/// vector is zero counts as perfectly aligned.
pub fn l_bayer(out: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    out.check_same_shape(gt)?;
    let a = naive_rgb(out)?;
    let b = naive_rgb(gt)?;
    if a.is_empty() {
        return dim_err("Bayer loss on an empty image");
    }
    // 1 - cos(p, q) = |p/|p| - q/|q||^2 / 2, which is exactly zero for
    // parallel vectors that differ by a power-of-two scale
    let sum: f64 = (0..a.len())
        .map(|i| {
            let (p, q) = (a.pixel(i), b.pixel(i));
            let np = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let nq = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            if np == 0.0 || nq == 0.0 {
                return 0.0;
            }
            let d: f64 = (0..3).map(|k| (p[k] / np - q[k] / nq).powi(2)).sum();
            (0.5 * d).min(2.0)
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Every component plus their weighted sum. Without a mask the AMSS term is 0.
pub fn total_loss(out: &Tensor<f32>, gt: &Tensor<f32>, mask: Option<&Tensor<f32>>, w: &LossWeights) -> Result<LossReport> {
    w.validate()?;
    let l_pix = l_pix(out, gt)?;
    let l_ssim = l_ssim(out, gt)?;
    let l_amss = match mask {
        Some(m) => l_amss(out, gt, m)?,
        None => 0.0,
    };
    let l_bayer = l_bayer(out, gt)?;
    let total = w.alpha * l_amss + w.beta * l_bayer + w.gamma * l_pix + w.eta_w * l_ssim;
    Ok(LossReport { l_pix, l_ssim, l_amss, l_bayer, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(shape: [usize; 3], seed: u64) -> Tensor<f32> {
        let mut s = seed;
        Tensor::from_fn(shape, |_, _, _| {
            s = crate::rng::splitmix64(s);
            0.05 + 0.9 * ((s >> 40) as f32 / (1u64 << 24) as f32)
        })
    }

    #[test]
    fn pix_closed_forms() {
        let a = img([4, 6, 6], 1);
        assert_eq!(l_pix(&a, &a).unwrap(), 0.0);
        let z = Tensor::<f32>::zeros([4, 6, 6]);
        let d = Tensor::<f32>::filled([4, 6, 6], 0.25);
        assert_eq!(l_pix(&z, &d).unwrap(), 0.25);
        let b = img([4, 6, 6], 2);
        let l1 = l_pix(&a, &b).unwrap();
        let l2 = l_pix(&a.map(|v| 2.0 * v), &b.map(|v| 2.0 * v)).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn ssim_loss_definition() {
        let a = img([2, 176, 176], 3);
        let b = img([2, 176, 176], 4);
        assert_eq!(l_ssim(&a, &a).unwrap(), 0.0);
        let l = l_ssim(&a, &b).unwrap();
        assert_eq!(l, 1.0 - ms_ssim(&a, &b).unwrap());
        assert!((0.0..=1.0).contains(&l));
    }

    #[test]
    fn amss_masks() {
        let a = img([4, 176, 176], 5);
        let b = img([4, 176, 176], 6);
        let ones = Tensor::<f32>::filled([1, 176, 176], 1.0);
        let zeros = Tensor::<f32>::zeros([1, 176, 176]);
        assert_eq!(l_amss(&a, &b, &ones).unwrap(), l_ssim(&a, &b).unwrap());
        assert_eq!(l_amss(&a, &b, &zeros).unwrap(), 0.0);
        let mut bad = zeros.clone();
        bad.set(0, 3, 3, 0.5);
        assert!(matches!(l_amss(&a, &b, &bad), Err(Error::Validation(_))));
        assert!(l_amss(&a, &b, &Tensor::zeros([1, 176, 170])).is_err());
    }

    #[test]
    fn amss_ignores_changes_outside_mask() {
        // Mask the left half; perturb a block in the right half. Masked inputs
        // then coincide bitwise, whatever the window support.
        let gt = img([4, 176, 176], 7);
        let mut out = gt.clone();
        for c in 0..4 {
            for y in 60..100 {
                for x in 140..170 {
                    out.set(c, y, x, 0.0);
                }
            }
        }
        let mask = Tensor::from_fn([1, 176, 176], |_, _, x| if x < 88 { 1.0 } else { 0.0 });
        assert_eq!(l_amss(&out, &gt, &mask).unwrap(), 0.0);
        assert!(l_ssim(&out, &gt).unwrap() > 0.0);
    }

    #[test]
    fn bayer_cases() {
        let gt = img([4, 8, 8], 8);
        assert_eq!(l_bayer(&gt, &gt).unwrap(), 0.0);
        assert!(l_bayer(&gt.map(|v| 2.0 * v), &gt).unwrap().abs() < 1e-9);
        // R only against G only
        let red = Tensor::from_fn([4, 4, 4], |c, _, _| if c == 0 { 1.0 } else { 0.0 });
        let green = Tensor::from_fn([4, 4, 4], |c, _, _| if c == 1 || c == 2 { 1.0 } else { 0.0 });
        assert!((l_bayer(&red, &green).unwrap() - 1.0).abs() < 1e-12);
        // opposite directions need negative input, giving the upper bound
        let neg = red.map(|v| -v);
        assert!((l_bayer(&red, &neg).unwrap() - 2.0).abs() < 1e-12);
        let z = Tensor::<f32>::zeros([4, 4, 4]);
        assert_eq!(l_bayer(&z, &red).unwrap(), 0.0);
    }

    #[test]
    fn total_combines_components() {
        let a = img([4, 176, 176], 9);
        let b = img([4, 176, 176], 10);
        let mask = Tensor::from_fn([1, 176, 176], |_, y, _| if y < 100 { 1.0 } else { 0.0 });
        let w = LossWeights::new(0.3, 1.7, 2.0, 0.5).unwrap();
        let r = total_loss(&a, &b, Some(&mask), &w).unwrap();
        let want = 0.3 * l_amss(&a, &b, &mask).unwrap()
            + 1.7 * l_bayer(&a, &b).unwrap()
            + 2.0 * l_pix(&a, &b).unwrap()
            + 0.5 * l_ssim(&a, &b).unwrap();
        assert!((r.total - want).abs() < 1e-12);
        let zero = LossWeights::new(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(total_loss(&a, &b, Some(&mask), &zero).unwrap().total, 0.0);
        let only_a = LossWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(total_loss(&a, &b, Some(&mask), &only_a).unwrap().total, r.l_amss);
        let same = total_loss(&a, &a, Some(&mask), &w).unwrap();
        assert_eq!(same, LossReport { l_pix: 0.0, l_ssim: 0.0, l_amss: 0.0, l_bayer: 0.0, total: 0.0 });
        assert!(LossWeights::new(-1.0, 0.0, 0.0, 0.0).is_err());
    }
}
