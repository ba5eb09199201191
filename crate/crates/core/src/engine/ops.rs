use crate::error::{dim_err, Result};
use crate::par;

use super::tensor::{Element, Tensor};

/// Rows processed together so the accumulator block stays cache resident.
const ROW_BLOCK: usize = 16;

/// Adds `weight * src` shifted by `(dy, dx)` into the accumulator rows
/// `[y0, y0 + rows)`. Taps falling outside the source read `pad`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_shifted<T: Element>(
    acc: &mut [f64],
    src: &[T],
    h: usize,
    w: usize,
    y0: usize,
    dy: isize,
    dx: isize,
    weight: f64,
    pad: f64,
) {
    let rows = acc.len() / w;
    let x_lo = (-dx).max(0) as usize;
    let x_hi = (w as isize - dx.max(0)).max(x_lo as isize) as usize;
    let x_hi = x_hi.min(w);
    let edge = weight * pad;
    for r in 0..rows {
        let y = y0 + r;
        let row = &mut acc[r * w..(r + 1) * w];
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            if pad != 0.0 {
                row.iter_mut().for_each(|a| *a += edge);
            }
            continue;
        }
        if pad != 0.0 {
            row[..x_lo].iter_mut().for_each(|a| *a += edge);
            row[x_hi..].iter_mut().for_each(|a| *a += edge);
        }
        let base = sy as usize * w;
        let s0 = (base as isize + x_lo as isize + dx) as usize;
        let s = &src[s0..s0 + (x_hi - x_lo)];
        for (a, &v) in row[x_lo..x_hi].iter_mut().zip(s) {
            *a += weight * v.to_f64();
        }
    }
}

/// General stride-1 "same" convolution with a square `k×k` kernel, `k` odd.
///
/// `weight` is laid out `[c_out][c_in][k][k]`. Out-of-image taps read zero,
/// or `border[i]` for input channel `i` when a border is given.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    k: usize,
    border: Option<&[T]>,
) -> Result<Tensor<T>> {
    let [c_in, h, w] = x.shape();
    if k.is_multiple_of(2) {
        return dim_err(format!("kernel size {k} must be odd"));
    }
    if weight.len() != c_out * c_in * k * k {
        return dim_err(format!(
            "conv weight has {} values, expected {}x{}x{}x{}",
            weight.len(),
            c_out,
            c_in,
            k,
            k
        ));
    }
    if bias.len() != c_out {
        return dim_err(format!("conv bias has {} values, expected {c_out}", bias.len()));
    }
    if let Some(b) = border {
        if b.len() != c_in {
            return dim_err(format!("border has {} values, expected {c_in}", b.len()));
        }
    }
    let radius = (k / 2) as isize;
    let hw = h * w;
    let mut out = Tensor::zeros([c_out, h, w]);
    if hw == 0 {
        return Ok(out);
    }
    par::for_each_chunk_mut(out.data_mut(), hw, |o, dst| {
        let mut acc = vec![0.0f64; ROW_BLOCK.min(h) * w];
        let b = bias[o].to_f64();
        let mut y0 = 0;
        while y0 < h {
            let rows = ROW_BLOCK.min(h - y0);
            let acc = &mut acc[..rows * w];
            acc.iter_mut().for_each(|a| *a = b);
            for i in 0..c_in {
                let src = x.channel(i);
                let pad = border.map_or(0.0, |bd| bd[i].to_f64());
                let wbase = (o * c_in + i) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[wbase + ky * k + kx].to_f64();
                        accumulate_shifted(
                            acc,
                            src,
                            h,
                            w,
                            y0,
                            ky as isize - radius,
                            kx as isize - radius,
                            wv,
                            pad,
                        );
                    }
                }
            }
            for (d, a) in dst[y0 * w..(y0 + rows) * w].iter_mut().zip(acc.iter()) {
                *d = T::from_f64(*a);
            }
            y0 += rows;
        }
    });
    Ok(out)
}

/// 3×3 convolution, zero padding 1 unless a per-channel border is given.
pub fn conv2d_3x3<T: Element>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    border: Option<&[T]>,
) -> Result<Tensor<T>> {
    conv2d(x, weight, bias, c_out, 3, border)
}

/// Pointwise channel mixing.
pub fn conv2d_1x1<T: Element>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
) -> Result<Tensor<T>> {
    conv2d(x, weight, bias, c_out, 1, None)
}

/// Applies one fixed 3×3 kernel to every channel independently and scales
/// channel `c` of the result by `scale[c]`.
pub fn depthwise_3x3<T: Element>(
    x: &Tensor<T>,
    kernel: &[f64; 9],
    scale: &[T],
    border: Option<&[T]>,
) -> Result<Tensor<T>> {
    let [c, h, w] = x.shape();
    if scale.len() != c {
        return dim_err(format!("depthwise scale has {} values, expected {c}", scale.len()));
    }
    if let Some(b) = border {
        if b.len() != c {
            return dim_err(format!("border has {} values, expected {c}", b.len()));
        }
    }
    let hw = h * w;
    let mut out = Tensor::zeros([c, h, w]);
    if hw == 0 {
        return Ok(out);
    }
    par::for_each_chunk_mut(out.data_mut(), hw, |ci, dst| {
        let src = x.channel(ci);
        let pad = border.map_or(0.0, |b| b[ci].to_f64());
        let s = scale[ci].to_f64();
        let mut acc = vec![0.0f64; hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let kv = kernel[ky * 3 + kx];
                if kv == 0.0 {
                    continue;
                }
                accumulate_shifted(
                    &mut acc,
                    src,
                    h,
                    w,
                    0,
                    ky as isize - 1,
                    kx as isize - 1,
                    kv,
                    pad,
                );
            }
        }
        for (d, a) in dst.iter_mut().zip(&acc) {
            *d = T::from_f64(s * a);
        }
    });
    Ok(out)
}

/// `[C, H, W] -> [4C, H/2, W/2]`; output channel `4c + 2dy + dx` holds
/// `x[c, 2i + dy, 2j + dx]`.
pub fn pixel_unshuffle2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return dim_err(format!("pixel unshuffle needs even dims, got {h}x{w}"));
    }
    let (h2, w2) = (h / 2, w / 2);
    Ok(Tensor::from_fn([4 * c, h2, w2], |oc, i, j| {
        let (ci, sub) = (oc / 4, oc % 4);
        x.get(ci, 2 * i + sub / 2, 2 * j + sub % 2)
    }))
}

/// Inverse of [`pixel_unshuffle2`]: `[4C, H, W] -> [C, 2H, 2W]`.
pub fn pixel_shuffle2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [c4, h, w] = x.shape();
    if c4 % 4 != 0 {
        return dim_err(format!("pixel shuffle needs channels divisible by 4, got {c4}"));
    }
    Ok(Tensor::from_fn([c4 / 4, 2 * h, 2 * w], |c, y, xx| {
        x.get(4 * c + 2 * (y % 2) + xx % 2, y / 2, xx / 2)
    }))
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v.to_f64() > 0.0 { v } else { T::default() })
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.check_same_shape(b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| T::from_f64(x.to_f64() + y.to_f64()))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Stacks tensors along the channel axis.
pub fn concat<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return dim_err("concat of zero tensors");
    };
    let [_, h, w] = first.shape();
    let mut channels = 0;
    for p in parts {
        if p.height() != h || p.width() != w {
            return dim_err(format!(
                "concat spatial mismatch: {:?} vs {:?}",
                first.shape(),
                p.shape()
            ));
        }
        channels += p.channels();
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec([channels, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Quintuple loop over output channel, row, column, input channel and tap.
    fn naive_conv(
        x: &Tensor<f64>,
        weight: &[f64],
        bias: &[f64],
        c_out: usize,
        k: usize,
    ) -> Tensor<f64> {
        let [c_in, h, w] = x.shape();
        let r = (k / 2) as isize;
        Tensor::from_fn([c_out, h, w], |o, y, xx| {
            let mut s = bias[o];
            for i in 0..c_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky as isize - r;
                        let sx = xx as isize + kx as isize - r;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            s += weight[((o * c_in + i) * k + ky) * k + kx]
                                * x.get(i, sy as usize, sx as usize);
                        }
                    }
                }
            }
            s
        })
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn delta_kernel_adds_bias() {
        let x = Tensor::<f32>::from_fn([2, 5, 6], |c, y, xx| (c * 30 + y * 6 + xx) as f32 * 0.1);
        let mut weight = vec![0.0f32; 2 * 2 * 9];
        weight[4] = 1.0; // o=0,i=0 centre
        weight[(2 + 1) * 9 + 4] = 1.0; // o=1,i=1 centre
        let out = conv2d_3x3(&x, &weight, &[0.5, -0.25], 2, None).unwrap();
        for c in 0..2 {
            let b = [0.5f32, -0.25][c];
            for (o, i) in out.channel(c).iter().zip(x.channel(c)) {
                assert_eq!(*o, i + b);
            }
        }
    }

    #[test]
    fn box_kernel_on_constant() {
        let c = 0.9f64;
        let x = Tensor::<f64>::filled([1, 6, 7], c);
        let weight = vec![1.0 / 9.0; 9];
        let out = conv2d_3x3(&x, &weight, &[0.0], 1, None).unwrap();
        let oracle = naive_conv(&x, &weight, &[0.0], 1, 3);
        assert!(out.max_abs_diff(&oracle).unwrap() < 1e-15);
        assert!((out.get(0, 3, 3) - c).abs() < 1e-15);
        // corner sees 4 of 9 taps, edge 6 of 9
        assert!((out.get(0, 0, 0) - c * 4.0 / 9.0).abs() < 1e-15);
        assert!((out.get(0, 0, 3) - c * 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn conv3x3_matches_naive_oracle() {
        let mut r = lcg(11);
        let x = Tensor::<f64>::from_fn([8, 16, 16], |_, _, _| r());
        let weight: Vec<f64> = (0..8 * 8 * 9).map(|_| r()).collect();
        let bias: Vec<f64> = (0..8).map(|_| r()).collect();
        let got = conv2d_3x3(&x, &weight, &bias, 8, None).unwrap();
        let want = naive_conv(&x, &weight, &bias, 8, 3);
        let rel = got.max_abs_diff(&want).unwrap() / want.max_abs();
        assert!(rel <= 1e-6, "rel {rel}");

        let xf = x.cast::<f32>();
        let wf: Vec<f32> = weight.iter().map(|&v| v as f32).collect();
        let bf: Vec<f32> = bias.iter().map(|&v| v as f32).collect();
        let gotf = conv2d_3x3(&xf, &wf, &bf, 8, None).unwrap().cast::<f64>();
        let wantf = naive_conv(
            &xf.cast(),
            &wf.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &bf.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            8,
            3,
        );
        assert!(gotf.max_abs_diff(&wantf).unwrap() / wantf.max_abs() <= 1e-6);
    }

    #[test]
    fn conv1x1_matches_naive_oracle() {
        let mut r = lcg(3);
        let x = Tensor::<f64>::from_fn([5, 9, 4], |_, _, _| r());
        let weight: Vec<f64> = (0..3 * 5).map(|_| r()).collect();
        let bias: Vec<f64> = (0..3).map(|_| r()).collect();
        let got = conv2d_1x1(&x, &weight, &bias, 3).unwrap();
        let want = naive_conv(&x, &weight, &bias, 3, 1);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-13);
    }

    #[test]
    fn depthwise_matches_naive_oracle() {
        let mut r = lcg(5);
        let x = Tensor::<f64>::from_fn([3, 7, 8], |_, _, _| r());
        let kernel = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
        let scale = [0.5, -2.0, 1.5];
        let got = depthwise_3x3(&x, &kernel, &scale, None).unwrap();
        // diagonal full conv as the oracle
        let mut weight = vec![0.0; 3 * 3 * 9];
        for c in 0..3 {
            for k in 0..9 {
                weight[(c * 3 + c) * 9 + k] = kernel[k] * scale[c];
            }
        }
        let want = naive_conv(&x, &weight, &[0.0; 3], 3, 3);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-13);
    }

    #[test]
    fn constant_border_equals_explicit_padding() {
        let mut r = lcg(8);
        let x = Tensor::<f64>::from_fn([2, 5, 5], |_, _, _| r());
        let weight: Vec<f64> = (0..9 * 2).map(|_| r()).collect();
        let border = [0.3, -0.7];
        let got = conv2d_3x3(&x, &weight, &[0.0], 1, Some(&border)).unwrap();
        let padded = Tensor::<f64>::from_fn([2, 7, 7], |c, y, xx| {
            if y == 0 || xx == 0 || y == 6 || xx == 6 {
                border[c]
            } else {
                x.get(c, y - 1, xx - 1)
            }
        });
        let full = naive_conv(&padded, &weight, &[0.0], 1, 3).crop(1, 1, 5, 5).unwrap();
        assert!(got.max_abs_diff(&full).unwrap() < 1e-13);
    }

    #[test]
    fn unshuffle_channel_order() {
        let x = Tensor::<f32>::from_vec([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = pixel_unshuffle2(&x).unwrap();
        assert_eq!(u.shape(), [4, 1, 1]);
        assert_eq!(u.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(pixel_unshuffle2(&Tensor::<f32>::zeros([1, 3, 2])).is_err());
        assert!(pixel_shuffle2(&Tensor::<f32>::zeros([3, 2, 2])).is_err());
    }

    #[test]
    fn relu_cases() {
        let pos = Tensor::<f32>::from_fn([1, 3, 3], |_, y, x| (y + x) as f32);
        assert_eq!(relu(&pos), pos);
        let neg = pos.map(|v| -v - 1.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let mixed = pos.map(|v| v - 2.0);
        assert_eq!(relu(&relu(&mixed)), relu(&mixed));
    }

    #[test]
    fn concat_and_add_shapes() {
        let a = Tensor::<f32>::filled([2, 3, 3], 1.0);
        let b = Tensor::<f32>::filled([1, 3, 3], 2.0);
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), [3, 3, 3]);
        assert_eq!(c.get(2, 1, 1), 2.0);
        assert!(concat(&[&a, &Tensor::zeros([1, 2, 3])]).is_err());
        assert!(add(&a, &b).is_err());
        assert_eq!(add(&a, &a).unwrap().get(1, 2, 2), 2.0);
    }

    proptest! {
        #[test]
        fn shuffle_inverts_unshuffle(c in 1usize..4, h2 in 1usize..5, w2 in 1usize..5, seed in any::<u64>()) {
            let mut r = lcg(seed);
            let x = Tensor::<f32>::from_fn([c, 2 * h2, 2 * w2], |_, _, _| r() as f32);
            let back = pixel_shuffle2(&pixel_unshuffle2(&x).unwrap()).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn conv_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut r = lcg(seed);
            let x = Tensor::<f64>::from_fn([2, 6, 5], |_, _, _| r());
            let y = Tensor::<f64>::from_fn([2, 6, 5], |_, _, _| r());
            let weight: Vec<f64> = (0..3 * 2 * 9).map(|_| r()).collect();
            let zero = [0.0; 3];
            let mix = Tensor::from_fn([2, 6, 5], |c, i, j| a * x.get(c, i, j) + b * y.get(c, i, j));
            let lhs = conv2d_3x3(&mix, &weight, &zero, 3, None).unwrap();
            let cx = conv2d_3x3(&x, &weight, &zero, 3, None).unwrap();
            let cy = conv2d_3x3(&y, &weight, &zero, 3, None).unwrap();
            let rhs = Tensor::from_fn([3, 6, 5], |c, i, j| a * cx.get(c, i, j) + b * cy.get(c, i, j));
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }
    }
}
