//! Wall-clock comparison of the multi-branch and fused graphs.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::repnet::{ModelGraph, Weights};
use crate::rng::{derive_seed, rng_from_seed, stream};

use super::forward::PreparedModel;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    /// Timed runs per graph.
    pub repeats: usize,
    /// Untimed runs per graph before timing starts.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { height: 512, width: 512, repeats: 20, warmup: 2, seed: 42 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub height: usize,
    pub width: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub threads: usize,
    pub multibranch_ms: Vec<f64>,
    pub fused_ms: Vec<f64>,
    pub median_multibranch_ms: f64,
    pub median_fused_ms: f64,
    /// `median_multibranch_ms / median_fused_ms`.
    pub speedup: f64,
}

pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Times both graphs on the same random input. Runs alternate between the two
/// graphs so slow drifts in machine load affect both equally.
pub fn benchmark(
    multibranch: (&ModelGraph, &Weights),
    fused: (&ModelGraph, &Weights),
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::Parameter("benchmark needs at least one repeat".into()));
    }
    let a = PreparedModel::new(multibranch.0, multibranch.1)?;
    let b = PreparedModel::new(fused.0, fused.1)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, stream::BATCH_BASE));
    let mut input = || Tensor::from_fn([4, cfg.height, cfg.width], |_, _, _| rng.random_range(0.0f32..1.0));
    let (short, long) = (input(), input());
    let time = |m: &PreparedModel| -> Result<f64> {
        let t = Instant::now();
        let out = m.run(&short, &long)?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(out);
        Ok(ms)
    };
    for _ in 0..cfg.warmup {
        time(&a)?;
        time(&b)?;
    }
    let mut ma = Vec::with_capacity(cfg.repeats);
    let mut mb = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        ma.push(time(&a)?);
        mb.push(time(&b)?);
    }
    let (med_a, med_b) = (median(&ma), median(&mb));
    Ok(BenchReport {
        height: cfg.height,
        width: cfg.width,
        repeats: cfg.repeats,
        warmup: cfg.warmup,
        threads: par::current_threads(),
        multibranch_ms: ma,
        fused_ms: mb,
        median_multibranch_ms: med_a,
        median_fused_ms: med_b,
        speedup: med_a / med_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repnet::{build_dualunet, fuse_model, init_weights, ArchConfig};

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn single_repeat_and_json() {
        let g = build_dualunet(&ArchConfig { widths: vec![8], ..ArchConfig::default() }).unwrap();
        let w = init_weights(&g, 1).unwrap();
        let (fg, fw) = fuse_model(&g, &w).unwrap();
        let cfg = BenchConfig { height: 16, width: 16, repeats: 1, warmup: 0, seed: 1 };
        let r = benchmark((&g, &w), (&fg, &fw), &cfg).unwrap();
        assert_eq!(r.multibranch_ms.len(), 1);
        assert_eq!(r.median_fused_ms, r.fused_ms[0]);
        let back: BenchReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(benchmark((&g, &w), (&fg, &fw), &BenchConfig { repeats: 0, ..cfg }).is_err());
    }
}
