//! Topological convolution block: a multi-branch training-time block that
//! collapses into one 3×3 convolution.
//!
//! Branches, all stride 1 and summed:
//!
//! * `main`: 3×3 convolution;
//! * `expand` → `squeeze`: 1×1 to `c_mid` channels, then 3×3 back to `c_out`;
//! * Sobel: 1×1 `sobel_pre`, then fixed depthwise Sobel-x and Sobel-y, each
//!   scaled per channel;
//! * Laplacian (decoder variant only): 1×1 `pre`, fixed depthwise Laplacian,
//!   per-channel scale;
//! * `conv1x1`;
//! * identity when `c_in == c_out` and enabled.
//!
//! The input is zero padded. The intermediate maps feeding a 3×3 stage are
//! padded with the bias of the 1×1 that produced them, which is what a 1×1
//! applied to the zero-padded input would yield there. That keeps the fused
//! kernel exact on the image border as well as in the interior.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::engine::{conv2d, depthwise_3x3, Element, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::rng::Rng;

use super::kernels::{kernel_sum, LAPLACIAN, SOBEL_X, SOBEL_Y};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcbVariant {
    /// No Laplacian branch.
    Encoder,
    /// All branches including the Laplacian.
    Decoder,
}

/// Square convolution, weight layout `[c_out][c_in][k][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T = f32> {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Element> Conv<T> {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        Conv { c_out, c_in, k, weight: vec![T::default(); c_out * c_in * k * k], bias: vec![T::default(); c_out] }
    }

    pub fn new(c_out: usize, c_in: usize, k: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let c = Conv { c_out, c_in, k, weight, bias };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_multiple_of(2) {
            return dim_err(format!("kernel size {} must be odd", self.k));
        }
        if self.weight.len() != self.c_out * self.c_in * self.k * self.k || self.bias.len() != self.c_out {
            return dim_err(format!(
                "conv {}x{}x{k}x{k} has {} weights and {} biases",
                self.c_out,
                self.c_in,
                self.weight.len(),
                self.bias.len(),
                k = self.k
            ));
        }
        if !self.weight.iter().chain(&self.bias).all(|v| v.to_f64().is_finite()) {
            return Err(Error::Validation("conv parameters must be finite".into()));
        }
        Ok(())
    }

    /// Uniform weights in `±w_bound`, biases in `±b_bound`.
    pub fn random(c_out: usize, c_in: usize, k: usize, w_bound: f64, b_bound: f64, rng: &mut Rng) -> Self {
        let mut draw = |b: f64, n: usize| -> Vec<T> {
            (0..n).map(|_| T::from_f64(if b > 0.0 { rng.random_range(-b..b) } else { 0.0 })).collect()
        };
        let weight = draw(w_bound, c_out * c_in * k * k);
        let bias = draw(b_bound, c_out);
        Conv { c_out, c_in, k, weight, bias }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn w(&self, o: usize, i: usize, t: usize) -> T {
        self.weight[(o * self.c_in + i) * self.k * self.k + t]
    }

    pub fn forward(&self, x: &Tensor<T>, border: Option<&[T]>) -> Result<Tensor<T>> {
        if x.channels() != self.c_in {
            return dim_err(format!("conv expects {} input channels, got {}", self.c_in, x.channels()));
        }
        conv2d(x, &self.weight, &self.bias, self.c_out, self.k, border)
    }

    pub fn cast<U: Element>(&self) -> Conv<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64())).collect();
        Conv { c_out: self.c_out, c_in: self.c_in, k: self.k, weight: c(&self.weight), bias: c(&self.bias) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianBranch<T = f32> {
    pub pre: Conv<T>,
    pub scale: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcbParams<T = f32> {
    pub variant: TcbVariant,
    pub main: Conv<T>,
    pub expand: Conv<T>,
    pub squeeze: Conv<T>,
    pub sobel_pre: Conv<T>,
    pub sobel_scale_x: Vec<T>,
    pub sobel_scale_y: Vec<T>,
    /// Present iff `variant` is [`TcbVariant::Decoder`].
    pub laplacian: Option<LaplacianBranch<T>>,
    pub conv1x1: Conv<T>,
    pub use_identity: bool,
}

fn cast_vec<T: Element, U: Element>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from_f64(x.to_f64())).collect()
}

impl<T: Element> TcbParams<T> {
    /// All-zero parameters; the block then computes the identity if enabled
    /// and zero otherwise.
    pub fn zeros(c_in: usize, c_out: usize, c_mid: usize, variant: TcbVariant, use_identity: bool) -> Result<Self> {
        let p = TcbParams {
            variant,
            main: Conv::zeros(c_out, c_in, 3),
            expand: Conv::zeros(c_mid, c_in, 1),
            squeeze: Conv::zeros(c_out, c_mid, 3),
            sobel_pre: Conv::zeros(c_out, c_in, 1),
            sobel_scale_x: vec![T::default(); c_out],
            sobel_scale_y: vec![T::default(); c_out],
            laplacian: (variant == TcbVariant::Decoder)
                .then(|| LaplacianBranch { pre: Conv::zeros(c_out, c_in, 1), scale: vec![T::default(); c_out] }),
            conv1x1: Conv::zeros(c_out, c_in, 1),
            use_identity,
        };
        p.validate()?;
        Ok(p)
    }

    /// Random parameters. Each branch is He-uniform scaled down by the square
    /// root of the branch count so the summed output keeps unit-order variance.
    pub fn random(
        c_in: usize,
        c_out: usize,
        c_mid: usize,
        variant: TcbVariant,
        use_identity: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut p = Self::zeros(c_in, c_out, c_mid, variant, use_identity)?;
        let branches = 4.0 + f64::from(u8::from(p.laplacian.is_some())) + f64::from(u8::from(use_identity));
        let damp = branches.sqrt().recip();
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt() * damp;
        let bb = 0.05;
        p.main = Conv::random(c_out, c_in, 3, he(9 * c_in), bb, rng);
        p.expand = Conv::random(c_mid, c_in, 1, (3.0 / c_in as f64).sqrt(), bb, rng);
        p.squeeze = Conv::random(c_out, c_mid, 3, he(9 * c_mid), bb, rng);
        p.sobel_pre = Conv::random(c_out, c_in, 1, (3.0 / c_in as f64).sqrt(), bb, rng);
        let mut scales = |n: usize, b: f64| -> Vec<T> { (0..n).map(|_| T::from_f64(rng.random_range(-b..b))).collect() };
        // Sobel and Laplacian kernels have L2 norms of about 3.5 and 4.5
        p.sobel_scale_x = scales(c_out, 0.3 * damp);
        p.sobel_scale_y = scales(c_out, 0.3 * damp);
        let lap_scale = scales(c_out, 0.25 * damp);
        if let Some(l) = p.laplacian.as_mut() {
            l.pre = Conv::random(c_out, c_in, 1, (3.0 / c_in as f64).sqrt(), bb, rng);
            l.scale = lap_scale;
        }
        p.conv1x1 = Conv::random(c_out, c_in, 1, he(c_in), bb, rng);
        Ok(p)
    }

    pub fn c_in(&self) -> usize {
        self.main.c_in
    }

    pub fn c_out(&self) -> usize {
        self.main.c_out
    }

    pub fn c_mid(&self) -> usize {
        self.expand.c_out
    }

    pub fn validate(&self) -> Result<()> {
        let (ci, co, cm) = (self.c_in(), self.c_out(), self.c_mid());
        let check = |name: &str, c: &Conv<T>, o: usize, i: usize, k: usize| -> Result<()> {
            c.validate()?;
            if (c.c_out, c.c_in, c.k) != (o, i, k) {
                return dim_err(format!(
                    "TCB branch {name} is {}x{}x{k2}x{k2}, expected {o}x{i}x{k}x{k}",
                    c.c_out,
                    c.c_in,
                    k2 = c.k
                ));
            }
            Ok(())
        };
        check("main", &self.main, co, ci, 3)?;
        check("expand", &self.expand, cm, ci, 1)?;
        check("squeeze", &self.squeeze, co, cm, 3)?;
        check("sobel", &self.sobel_pre, co, ci, 1)?;
        check("conv1x1", &self.conv1x1, co, ci, 1)?;
        if self.sobel_scale_x.len() != co || self.sobel_scale_y.len() != co {
            return dim_err("Sobel scales must have one entry per output channel");
        }
        match (&self.laplacian, self.variant) {
            (Some(l), TcbVariant::Decoder) => {
                check("laplacian", &l.pre, co, ci, 1)?;
                if l.scale.len() != co {
                    return dim_err("Laplacian scale must have one entry per output channel");
                }
            }
            (None, TcbVariant::Encoder) => {}
            (Some(_), TcbVariant::Encoder) => {
                return Err(Error::Validation("encoder TCB must not carry a Laplacian branch".into()))
            }
            (None, TcbVariant::Decoder) => {
                return Err(Error::Validation("decoder TCB requires a Laplacian branch".into()))
            }
        }
        if self.use_identity && ci != co {
            return Err(Error::Validation(format!("identity branch needs c_in == c_out, got {ci} and {co}")));
        }
        let scales = self.sobel_scale_x.iter().chain(&self.sobel_scale_y);
        let lap = self.laplacian.iter().flat_map(|l| l.scale.iter());
        if !scales.chain(lap).all(|v| v.to_f64().is_finite()) {
            return Err(Error::Validation("TCB scales must be finite".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.main.param_count()
            + self.expand.param_count()
            + self.squeeze.param_count()
            + self.sobel_pre.param_count()
            + 2 * self.c_out()
            + self.laplacian.as_ref().map_or(0, |l| l.pre.param_count() + l.scale.len())
            + self.conv1x1.param_count()
    }

    pub fn cast<U: Element>(&self) -> TcbParams<U> {
        TcbParams {
            variant: self.variant,
            main: self.main.cast(),
            expand: self.expand.cast(),
            squeeze: self.squeeze.cast(),
            sobel_pre: self.sobel_pre.cast(),
            sobel_scale_x: cast_vec(&self.sobel_scale_x),
            sobel_scale_y: cast_vec(&self.sobel_scale_y),
            laplacian: self
                .laplacian
                .as_ref()
                .map(|l| LaplacianBranch { pre: l.pre.cast(), scale: cast_vec(&l.scale) }),
            conv1x1: self.conv1x1.cast(),
            use_identity: self.use_identity,
        }
    }
}

/// Multi-branch evaluation. Branch outputs are summed in `f64` in a fixed order.
pub fn tcb_forward<T: Element>(p: &TcbParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    p.validate()?;
    if x.channels() != p.c_in() {
        return dim_err(format!("TCB expects {} input channels, got {}", p.c_in(), x.channels()));
    }
    let mut branches = Vec::with_capacity(7);
    branches.push(p.main.forward(x, None)?);
    let e = p.expand.forward(x, None)?;
    branches.push(p.squeeze.forward(&e, Some(&p.expand.bias))?);
    drop(e);
    let s = p.sobel_pre.forward(x, None)?;
    branches.push(depthwise_3x3(&s, &SOBEL_X, &p.sobel_scale_x, Some(&p.sobel_pre.bias))?);
    branches.push(depthwise_3x3(&s, &SOBEL_Y, &p.sobel_scale_y, Some(&p.sobel_pre.bias))?);
    drop(s);
    if let Some(l) = &p.laplacian {
        let t = l.pre.forward(x, None)?;
        branches.push(depthwise_3x3(&t, &LAPLACIAN, &l.scale, Some(&l.pre.bias))?);
    }
    branches.push(p.conv1x1.forward(x, None)?);
    if p.use_identity {
        branches.push(x.clone());
    }
    let shape = branches[0].shape();
    let mut out = Tensor::zeros(shape);
    for (idx, d) in out.data_mut().iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for b in &branches {
            acc += b.data()[idx].to_f64();
        }
        *d = T::from_f64(acc);
    }
    Ok(out)
}

/// Collapses every branch into one 3×3 kernel and bias. Accumulation runs in
/// `f64` regardless of `T`.
pub fn tcb_fuse<T: Element>(p: &TcbParams<T>) -> Result<Conv<T>> {
    p.validate()?;
    let (ci, co, cm) = (p.c_in(), p.c_out(), p.c_mid());
    let mut w = vec![0.0f64; co * ci * 9];
    let mut b = vec![0.0f64; co];
    let f = |v: T| v.to_f64();
    for o in 0..co {
        b[o] += f(p.main.bias[o]);
        for i in 0..ci {
            for t in 0..9 {
                w[(o * ci + i) * 9 + t] += f(p.main.w(o, i, t));
            }
        }
        // expand-squeeze: contraction over the middle channels
        let mut bes = f(p.squeeze.bias[o]);
        for m in 0..cm {
            let mut sq_sum = 0.0;
            for t in 0..9 {
                sq_sum += f(p.squeeze.w(o, m, t));
            }
            bes += sq_sum * f(p.expand.bias[m]);
            for i in 0..ci {
                let e = f(p.expand.w(m, i, 0));
                for t in 0..9 {
                    w[(o * ci + i) * 9 + t] += f(p.squeeze.w(o, m, t)) * e;
                }
            }
        }
        b[o] += bes;
        let mut derivative = |pre: &Conv<T>, scale: f64, k: &[f64; 9]| {
            for i in 0..ci {
                let pv = scale * f(pre.w(o, i, 0));
                for t in 0..9 {
                    w[(o * ci + i) * 9 + t] += pv * k[t];
                }
            }
            b[o] += scale * kernel_sum(k) * f(pre.bias[o]);
        };
        derivative(&p.sobel_pre, f(p.sobel_scale_x[o]), &SOBEL_X);
        derivative(&p.sobel_pre, f(p.sobel_scale_y[o]), &SOBEL_Y);
        if let Some(l) = &p.laplacian {
            derivative(&l.pre, f(l.scale[o]), &LAPLACIAN);
        }
        b[o] += f(p.conv1x1.bias[o]);
        for i in 0..ci {
            w[(o * ci + i) * 9 + 4] += f(p.conv1x1.w(o, i, 0));
        }
        if p.use_identity {
            w[(o * ci + o) * 9 + 4] += 1.0;
        }
    }
    Conv::new(co, ci, 3, cast_vec(&w), cast_vec(&b))
}
