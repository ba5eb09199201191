//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Run with `cargo test -p rawhdr-cli --test acceptance --release` for
//! realistic timings; the benchmark criterion dominates the runtime.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rawhdr::engine::io::{decode_tensor, encode_tensor, read_tensor, write_tensor};
use rawhdr::engine::{benchmark, forward, BenchConfig, Tensor};
use rawhdr::losses::{apply_mask, l_amss, l_bayer, l_ssim, total_loss, LossWeights};
use rawhdr::metrics::{delta_e, ms_ssim, psnr, ssim, SsimParams};
use rawhdr::pair::{apply_motion, form_pair, sample_motion_spec, MotionSpec, PairConfig, MOTION_OFFSET, MOTION_SIZE};
use rawhdr::raw::pgm::{read_raw, write_raw};
use rawhdr::raw::{normalize_levels, PackedRaw};
use rawhdr::repnet::{
    build_dualunet, count_params_flops, fuse_model, init_weights, tcb_forward, tcb_fuse, ArchConfig, TcbParams,
    TcbVariant, Weights,
};
use rawhdr::rng::{rng_from_seed, Rng};
use rawhdr::sensor::{add_noise, ExposureLabel, NoiseModel};
use rawhdr_cli::{cmd_synthesize, sha256_file, SynthesizeArgs, MANIFEST_FILE, QUADRUPLET_FILES};

/// Output hashes of `cmd_synthesize` with seed 42 on the checked-in fixtures.
const GOLDEN: [(&str, &str); 5] = [
    ("long.rten", "0cab8792817f8550f01f06dd517c90dee966cf1728265bf75c3767bb2ae08b09"),
    ("short.rten", "af1a01dfa20292d1bb540f88b219f72feac714e7fe1945971587ca6771ff1c93"),
    ("gt.rten", "c70b68cddeca9eb8aa0e88193f534bf4590aae5f46bccb039f1e01a4916971d2"),
    ("mask.rten", "4ea7dad911df3111e27392973c684130a09adc4fbceec921610cff5e7a3e2741"),
    ("manifest.json", "cb09b83e8e2c787d6094e35c354df0dc381307645ffb6dd1a34fd8ba9cfc1ea8"),
];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s as f64, format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn uniform(shape: [usize; 3], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_, _, _| rng.random_range(lo..hi) as f32)
}

fn random_tcb(rng: &mut Rng) -> TcbParams<f64> {
    let variant = if rng.random_bool(0.5) { TcbVariant::Decoder } else { TcbVariant::Encoder };
    let ci = rng.random_range(1..9);
    let identity = rng.random_bool(0.5);
    let co = if identity { ci } else { rng.random_range(1..9) };
    let cm = rng.random_range(1..17);
    TcbParams::random(ci, co, cm, variant, identity, rng).expect("valid TCB shape")
}

fn c1_tcb_fusion() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(1);
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    let (mut with_id, mut decoders) = (0, 0);
    for _ in 0..200 {
        let p = random_tcb(&mut rng);
        with_id += usize::from(p.use_identity);
        decoders += usize::from(p.variant == TcbVariant::Decoder);
        let x: Tensor<f64> = Tensor::from_fn([p.c_in(), 16, 16], |_, _, _| rng.random_range(-1.0..1.0));
        let a = tcb_forward(&p, &x).map_err(err)?;
        let b = tcb_fuse(&p).map_err(err)?.forward(&x, None).map_err(err)?;
        worst64 = worst64.max(a.max_abs_diff(&b).map_err(err)? / a.max_abs().max(f64::MIN_POSITIVE));

        let (p32, x32) = (p.cast::<f32>(), x.cast::<f32>());
        let a = tcb_forward(&p32, &x32).map_err(err)?;
        let b = tcb_fuse(&p32).map_err(err)?.forward(&x32, None).map_err(err)?;
        worst32 = worst32.max(a.max_abs_diff(&b).map_err(err)?);
    }
    check(with_id > 0 && with_id < 200 && decoders > 0 && decoders < 200, "instances do not mix variants")?;
    check(worst64 <= 1e-12, format!("double relative error {worst64:e} > 1e-12"))?;
    check(worst32 <= 1e-5, format!("single error {worst32:e} > 1e-5"))?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "200 blocks ({decoders} decoder, {with_id} identity): f64 rel {worst64:.2e}, f32 abs {worst32:.2e}, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn c2_graph_fusion() -> Outcome {
    let start = Instant::now();
    let cfg = ArchConfig::default();
    let g = build_dualunet(&cfg).map_err(err)?;
    let w = init_weights(&g, 2).map_err(err)?;
    let (fg, fw) = fuse_model(&g, &w).map_err(err)?;
    let mut rng = rng_from_seed(3);
    let short = uniform([4, 256, 256], 0.0, 1.0, &mut rng);
    let long = uniform([4, 256, 256], 0.0, 1.0, &mut rng);
    let a = forward(&g, &w, &short, &long).map_err(err)?;
    let b = forward(&fg, &fw, &short, &long).map_err(err)?;
    let diff = a.max_abs_diff(&b).map_err(err)?;

    let plain = build_dualunet(&cfg.plain()).map_err(err)?;
    let tcb_params = count_params_flops(&g, 256, 256).map_err(err)?.params;
    let fused_params = count_params_flops(&fg, 256, 256).map_err(err)?.params;
    let plain_params = count_params_flops(&plain, 256, 256).map_err(err)?.params;
    check(diff <= 1e-4, format!("max |multi - fused| = {diff:e} > 1e-4"))?;
    check(fw.param_count() as u64 == fused_params, "fused weight file disagrees with graph count")?;
    check(fused_params < tcb_params, format!("fused {fused_params} not below TCB {tcb_params}"))?;
    check(fused_params == plain_params, format!("fused {fused_params} != plain {plain_params}"))?;
    within(start.elapsed(), 120)?;
    Ok(format!(
        "max-abs {diff:.2e}; params tcb {tcb_params}, fused {fused_params}, plain {plain_params}; {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn c3_benchmark() -> Outcome {
    let start = Instant::now();
    let g = build_dualunet(&ArchConfig::default()).map_err(err)?;
    let w = init_weights(&g, 4).map_err(err)?;
    let (fg, fw) = fuse_model(&g, &w).map_err(err)?;
    let cfg = BenchConfig { height: 512, width: 512, repeats: 20, warmup: 1, seed: 5 };
    let r = benchmark((&g, &w), (&fg, &fw), &cfg).map_err(err)?;
    check(r.multibranch_ms.len() == 20 && r.fused_ms.len() == 20, "expected 20 timed runs per graph")?;
    check(
        r.median_fused_ms <= r.median_multibranch_ms,
        format!("median fused {:.1} ms > multi-branch {:.1} ms", r.median_fused_ms, r.median_multibranch_ms),
    )?;
    within(start.elapsed(), 300)?;
    Ok(format!(
        "median multi-branch {:.1} ms, fused {:.1} ms ({:.2}x, {} threads), {:.1}s",
        r.median_multibranch_ms,
        r.median_fused_ms,
        r.speedup,
        r.threads,
        start.elapsed().as_secs_f64()
    ))
}

fn c4_pipeline_identity() -> Outcome {
    let fixture = normalize_levels(&read_raw(fixtures().join("clean1.pgm")).map_err(err)?);
    let mut rng = rng_from_seed(6);
    let ramp = PackedRaw::linear(Tensor::from_fn([4, 64, 64], |c, y, x| ((c + y * 64 + x) as f32) / 16384.0)).map_err(err)?;
    let random = PackedRaw::linear(uniform([4, 64, 64], 0.0, 1.0, &mut rng)).map_err(err)?;
    let mut exact = 0usize;
    for (name, scene) in [("fixture", &fixture), ("ramp", &ramp), ("uniform", &random)] {
        let mut last_clipped = 0usize;
        for r in [4u32, 8, 16] {
            let cfg = PairConfig::noiseless().with_ratio(r).with_seed(7);
            let s = form_pair(scene, scene, &cfg).map_err(err)?;
            for t in [&s.long.planes, &s.short.planes, &s.gt.planes] {
                check(t.data().iter().all(|v| (0.0..=1.0).contains(v)), format!("{name} r={r}: value outside [0,1]"))?;
            }
            let max = cfg.max_dn();
            for (i, &c) in scene.planes.data().iter().enumerate() {
                if f64::from(c) * max * f64::from(r) < max {
                    let (l, sh, g) = (s.long.planes.data()[i], s.short.planes.data()[i], s.gt.planes.data()[i]);
                    check(l == g && sh == g, format!("{name} r={r}: pixel {i} long {l} short {sh} gt {g}"))?;
                    exact += 1;
                }
            }
            check(
                s.long_clipped >= last_clipped,
                format!("{name}: clipped count fell to {} at r={r}", s.long_clipped),
            )?;
            last_clipped = s.long_clipped;
        }
    }
    Ok(format!("3 scenes x r in {{4,8,16}}; {exact} unsaturated values identical"))
}

/// Variance of `max(X, 0)` for `X ~ N(mu, sigma²)` by Simpson integration.
fn clamped_variance(mu: f64, sigma: f64) -> f64 {
    let (hi, n) = (mu + 12.0 * sigma, 20_000);
    let h = hi / n as f64;
    let pdf = |y: f64| (-0.5 * ((y - mu) / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..=n {
        let y = i as f64 * h;
        let wgt = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        m1 += wgt * y * pdf(y);
        m2 += wgt * y * y * pdf(y);
    }
    let (m1, m2) = (m1 * h / 3.0, m2 * h / 3.0);
    m2 - m1 * m1
}

fn empirical_variance(model: &NoiseModel, x: f32, seed: u64) -> Result<f64, String> {
    let clean = PackedRaw::linear(Tensor::filled([4, 500, 500], x)).map_err(err)?;
    let noisy = add_noise(&clean, model, seed).map_err(err)?;
    let n = noisy.planes.data().len() as f64;
    let mean = noisy.planes.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    Ok(noisy.planes.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

fn c5_noise_statistics() -> Outcome {
    // The default short model puts x = 0.1 under two standard deviations
    // from the clamp at 0, which removes about 5.1% of the variance. It is
    // checked against the clamped distribution instead of the affine law.
    let reference = NoiseModel { shot_coeff: 0.01, read_sigma: 0.02, label: ExposureLabel::Short };
    let mut worst = 0.0f64;
    for model in [reference, NoiseModel::default_long(), NoiseModel::default_short()] {
        for x in [0.1f32, 0.25, 0.5] {
            let var = empirical_variance(&model, x, 8)?;
            let affine = model.variance(f64::from(x));
            let clamped = clamped_variance(f64::from(x), affine.sqrt());
            if (clamped / affine - 1.0).abs() < 0.01 {
                let rel = (var / affine - 1.0).abs();
                worst = worst.max(rel);
                check(rel <= 0.05, format!("{model:?} x={x}: variance {var:.4e} vs {affine:.4e}"))?;
            } else {
                let rel = (var / clamped - 1.0).abs();
                check(rel <= 0.01, format!("{model:?} x={x}: variance {var:.4e} vs clamped {clamped:.4e}"))?;
            }
        }
    }
    let clean = PackedRaw::linear(Tensor::filled([4, 64, 64], 0.3)).map_err(err)?;
    let model = NoiseModel::default_short();
    let a = add_noise(&clean, &model, 9).map_err(err)?;
    let b = add_noise(&clean, &model, 9).map_err(err)?;
    let c = add_noise(&clean, &model, 10).map_err(err)?;
    let bits = |p: &PackedRaw| p.planes.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(bits(&a) == bits(&b), "same seed produced different noise")?;
    check(bits(&a) != bits(&c), "different seeds produced identical noise")?;
    Ok(format!("10^6 samples per point, worst relative variance error {:.2}%", worst * 100.0))
}

fn c6_masks() -> Outcome {
    let mut rng = rng_from_seed(11);
    let sizes = [(128usize, 128usize), (128, 256), (256, 128), (256, 256)];
    for i in 0..1000 {
        let (h, w) = sizes[i % sizes.len()];
        let spec = sample_motion_spec(h, w, &mut rng).map_err(err)?;
        let size_ok = |v: usize| (MOTION_SIZE.0..=MOTION_SIZE.1).contains(&v);
        let off_ok = |v: i64| (MOTION_OFFSET.0..=MOTION_OFFSET.1).contains(&v);
        check(size_ok(spec.width) && size_ok(spec.height), format!("size out of range: {spec:?}"))?;
        check(off_ok(spec.dx) && off_ok(spec.dy), format!("offset out of range: {spec:?}"))?;
        check(spec.validate(h, w).is_ok(), format!("rectangles leave the patch: {spec:?}"))?;
        if i % 50 == 0 {
            let patch = PackedRaw::linear(uniform([4, h, w], 0.0, 1.0, &mut rng)).map_err(err)?;
            let (_, mask) = apply_motion(&patch, &spec).map_err(err)?;
            check(mask.data().iter().all(|&v| v == 0.0 || v == 1.0), "mask is not binary")?;
            let ones = mask.data().iter().filter(|&&v| v == 1.0).count();
            check(ones >= spec.width * spec.height && ones <= 2 * spec.width * spec.height, "mask area mismatch")?;
        }
    }
    let patch = PackedRaw::linear(uniform([4, 128, 128], 0.0, 1.0, &mut rng)).map_err(err)?;
    let still = MotionSpec { x: 10, y: 20, width: 40, height: 50, dx: 0, dy: 0 };
    let (moved, mask) = apply_motion(&patch, &still).map_err(err)?;
    check(moved == patch, "zero offset changed the patch")?;
    let ones = mask.data().iter().filter(|&&v| v == 1.0).count();
    check(ones == 40 * 50, format!("zero-offset mask has {ones} ones, expected 2000"))?;
    Ok("1000 specs in range, masks binary, zero offset leaves the patch unchanged".into())
}

fn c7_metrics() -> Outcome {
    let mut rng = rng_from_seed(12);
    let a = uniform([4, 192, 192], 0.0, 1.0, &mut rng);
    check(psnr(&a, &a, 1.0).map_err(err)? == f64::INFINITY, "psnr(a,a) is not +inf")?;
    // difference of the two constants is 0.1 to within 1e-16
    let hi = 0.1f32;
    let lo = (f64::from(hi) - 0.1) as f32;
    let p = psnr(&Tensor::filled([4, 32, 32], lo), &Tensor::filled([4, 32, 32], hi), 1.0).map_err(err)?;
    check((p - 20.0).abs() <= 1e-9, format!("constant 0.1 difference gives {p} dB"))?;
    let m = ms_ssim(&a, &a).map_err(err)?;
    check((m - 1.0).abs() <= 1e-9, format!("ms_ssim(a,a) = {m}"))?;
    let d = delta_e(&a, &a).map_err(err)?;
    check(d == 0.0, format!("delta_e(a,a) = {d}"))?;
    let params = SsimParams::default();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = uniform([4, 24, 24], 0.0, 1.0, &mut rng);
        let y = uniform([4, 24, 24], 0.0, 1.0, &mut rng);
        worst = worst.max((ssim(&x, &y, &params).map_err(err)? - ssim(&y, &x, &params).map_err(err)?).abs());
    }
    check(worst <= 1e-12, format!("ssim asymmetry {worst:e}"))?;
    Ok(format!("psnr(0.1) = {p:.12} dB, ms_ssim(a,a) = {m}, ssim asymmetry {worst:.1e}"))
}

fn c8_losses() -> Outcome {
    let mut rng = rng_from_seed(13);
    let gt = uniform([4, 192, 192], 0.05, 0.95, &mut rng);
    let out = uniform([4, 192, 192], 0.05, 0.95, &mut rng);
    let mut mask = Tensor::<f32>::zeros([1, 192, 192]);
    for y in 40..120 {
        for x in 30..90 {
            mask.set(0, y, x, 1.0);
        }
    }
    let w = LossWeights::default();
    let zero = total_loss(&gt, &gt, Some(&mask), &w).map_err(err)?;
    for (name, v) in [("l_pix", zero.l_pix), ("l_ssim", zero.l_ssim), ("l_amss", zero.l_amss), ("l_bayer", zero.l_bayer), ("total", zero.total)] {
        check(v.abs() <= 1e-12, format!("{name} = {v:e} at out = gt"))?;
    }
    let ones = Tensor::filled([1, 192, 192], 1.0f32);
    let (amss, ls) = (l_amss(&out, &gt, &ones).map_err(err)?, l_ssim(&out, &gt).map_err(err)?);
    check(amss == ls, format!("l_amss(ones) {amss} != l_ssim {ls}"))?;
    check(apply_mask(&out, &ones).map_err(err)? == out, "all-ones mask changed the image")?;
    let bayer = l_bayer(&gt.map(|v| 2.0 * v), &gt).map_err(err)?;
    check(bayer.abs() <= 1e-9, format!("l_bayer(2 gt, gt) = {bayer:e}"))?;

    let base = LossWeights::new(0.7, 1.3, 0.4, 2.1).map_err(err)?;
    let r0 = total_loss(&out, &gt, Some(&mask), &base).map_err(err)?;
    let comps = [r0.l_amss, r0.l_bayer, r0.l_pix, r0.l_ssim];
    let mut worst = 0.0f64;
    for (k, comp) in comps.iter().enumerate() {
        for t in [0.5, 3.0] {
            let mut w = base;
            *[&mut w.alpha, &mut w.beta, &mut w.gamma, &mut w.eta_w][k] += t;
            let r = total_loss(&out, &gt, Some(&mask), &w).map_err(err)?;
            worst = worst.max((r.total - r0.total - t * comp).abs());
        }
    }
    check(worst <= 1e-12, format!("total loss departs from linearity by {worst:e}"))?;
    Ok(format!("zero at out = gt, l_amss(ones) == l_ssim, l_bayer(2x) = {bayer:.1e}, linearity {worst:.1e}"))
}

fn c9_io() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    for name in ["clean1.pgm", "clean2.pgm"] {
        let raw = read_raw(fixtures().join(name)).map_err(err)?;
        let copy = dir.path().join(name);
        write_raw(&copy, &raw).map_err(err)?;
        let again = read_raw(&copy).map_err(err)?;
        check(raw == again, format!("{name}: raw changed in round trip"))?;
        let same = |ext: &str| {
            std::fs::read(fixtures().join(name).with_extension(ext)).ok()
                == std::fs::read(copy.with_extension(ext)).ok()
        };
        check(same("pgm") && same("json"), format!("{name}: rewritten files differ from the originals"))?;
    }
    let mut rng = rng_from_seed(14);
    let mut t = uniform([3, 17, 9], -1e3, 1e3, &mut rng);
    t.data_mut()[0] = f32::MIN_POSITIVE / 4.0;
    t.data_mut()[1] = -0.0;
    let path = dir.path().join("t.rten");
    write_tensor(&path, &t).map_err(err)?;
    let back = read_tensor(&path).map_err(err)?;
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(back.shape() == t.shape() && bits(&back) == bits(&t), "RTEN round trip is not bitwise")?;
    check(encode_tensor(&decode_tensor(&encode_tensor(&t)).map_err(err)?) == encode_tensor(&t), "RTEN re-encode differs")?;

    let g = build_dualunet(&ArchConfig::default()).map_err(err)?;
    let w = init_weights(&g, 15).map_err(err)?;
    let (p1, p2) = (dir.path().join("w1.json"), dir.path().join("w2.json"));
    w.save(&p1).map_err(err)?;
    let l1 = Weights::load(&p1).map_err(err)?;
    l1.save(&p2).map_err(err)?;
    let l2 = Weights::load(&p2).map_err(err)?;
    check(l1 == w && l2 == l1, "weights changed across load/save")?;
    let blob = |p: &Path| std::fs::read(p.with_extension("bin")).ok();
    check(blob(&p1) == blob(&p2), "weight blobs differ")?;
    Ok(format!("2 raw files, RTEN tensor and {} weight tensors round-trip bitwise", w.len()))
}

fn c10_golden() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let args = SynthesizeArgs {
        clean1: fixtures().join("clean1.pgm"),
        clean2: fixtures().join("clean2.pgm"),
        out_dir: dir.path().to_path_buf(),
        seed: 42,
        ratio: None,
        config: None,
        noiseless: false,
    };
    cmd_synthesize(&args).map_err(err)?;
    let names = QUADRUPLET_FILES.iter().copied().chain([MANIFEST_FILE]);
    let mut mismatches = Vec::new();
    for (name, (gname, want)) in names.zip(GOLDEN) {
        assert_eq!(name, gname);
        let got = sha256_file(&dir.path().join(name)).map_err(err)?;
        if got != want {
            mismatches.push(format!("{name}: {got}"));
        }
    }
    check(mismatches.is_empty(), format!("hash mismatch: {}", mismatches.join(", ")))?;
    Ok("5 output files match the pinned SHA-256 hashes".into())
}

fn main() -> ExitCode {
    let _ = env_logger::builder().is_test(true).try_init();
    let criteria: [Criterion; 10] = [
        ("tcb fusion exactness", c1_tcb_fusion),
        ("end-to-end graph fusion", c2_graph_fusion),
        ("benchmark ordering", c3_benchmark),
        ("pipeline identity", c4_pipeline_identity),
        ("noise statistics", c5_noise_statistics),
        ("mask construction", c6_masks),
        ("metric identities", c7_metrics),
        ("loss identities", c8_losses),
        ("i/o round trips", c9_io),
        ("golden determinism", c10_golden),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
