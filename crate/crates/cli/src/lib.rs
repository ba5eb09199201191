//! Command implementations behind the `rawhdr` binary.
//!
//! Every `cmd_*` function validates its paths before doing any work and
//! returns the JSON document the binary prints on stdout. JSON objects are
//! emitted with sorted keys.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use rawhdr::engine::io::{read_tensor, write_tensor};
use rawhdr::engine::{benchmark, forward, BenchConfig, Tensor};
use rawhdr::losses::{total_loss, LossWeights};
use rawhdr::metrics::MetricsReport;
use rawhdr::pair::{build_quadruplet, synth_motion, PairConfig};
use rawhdr::raw::pgm::read_raw;
use rawhdr::raw::{normalize_levels, PackedRaw};
use rawhdr::repnet::{
    build_dualunet, count_params_flops, fuse_model, graph_for_weights, init_weights, ArchConfig,
    Weights,
};
use rawhdr::sensor::{ExposureLabel, NoiseModel};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 42;
/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "RAWHDR_THREADS";

pub const QUADRUPLET_FILES: [&str; 4] = ["long.rten", "short.rten", "gt.rten", "mask.rten"];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "rawhdr", version, about = "Raw-domain HDR data synthesis, fusion and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a long/short/gt/mask quadruplet from two clean raws.
    Synthesize(SynthesizeArgs),
    /// Apply synthetic object motion to a packed long-exposure tensor.
    Mask(MaskArgs),
    /// Fuse multi-branch weights into plain 3x3 convolutions.
    Fuse(FuseArgs),
    /// Run the network on a short/long pair.
    Infer(InferArgs),
    /// Score outputs against ground truth.
    Eval(EvalArgs),
    /// Time the multi-branch and fused networks.
    Bench(BenchArgs),
    /// Write reproducible random weights.
    InitWeights(InitWeightsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthesizeArgs {
    /// Clean raw (PGM with JSON sidecar) that becomes the long exposure.
    #[arg(long)]
    pub clean1: PathBuf,
    /// Clean raw that becomes the short exposure and the ground truth.
    #[arg(long)]
    pub clean2: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Fixed exposure ratio; drawn from the allowed set when omitted.
    #[arg(long)]
    pub ratio: Option<u32>,
    /// JSON pair configuration; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Disable both noise models.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MaskArgs {
    /// Packed `[C, H, W]` tensor file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    /// Multi-branch weight manifest.
    #[arg(long)]
    pub weights: PathBuf,
    /// Architecture JSON; the default architecture when omitted.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Output manifest (the blob is written next to it).
    #[arg(long)]
    pub out: PathBuf,
    /// Input height used for the FLOP count.
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Weight manifest, multi-branch or fused.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long)]
    pub long: PathBuf,
    #[arg(long)]
    pub short: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Network output tensor; repeat for several pairs.
    #[arg(long = "output", required = true)]
    pub outputs: Vec<PathBuf>,
    /// Ground-truth tensor, one per `--output`.
    #[arg(long = "gt", required = true)]
    pub gts: Vec<PathBuf>,
    /// Optional `[1, H, W]` motion mask, one per pair.
    #[arg(long = "mask")]
    pub masks: Vec<PathBuf>,
    /// Add the loss terms to the report.
    #[arg(long)]
    pub losses: bool,
    /// JSON loss weights `{alpha, beta, gamma, eta_w}`.
    #[arg(long)]
    pub loss_weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the fused form instead of the multi-branch one.
    #[arg(long)]
    pub fused: bool,
}

/// Serializes with sorted object keys and a trailing newline.
pub fn to_sorted_json<T: Serialize>(v: &T) -> Result<String> {
    // serde_json::Value keeps objects in a BTreeMap, so keys come out sorted
    let value = serde_json::to_value(v)?;
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

/// Category printed in the `error[...]` prefix.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rawhdr::Error>() {
            return e.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return "usage";
        }
    }
    "invalid-input"
}

/// One-line rendering of an error and its causes.
pub fn error_line(err: &anyhow::Error) -> String {
    format!("error[{}]: {:#}", error_kind(err), err).replace(['\n', '\r'], " ")
}

/// Parses the thread cap from the environment value, if any.
pub fn parse_threads(value: Option<&str>) -> Result<Option<usize>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(anyhow::Error::new(rawhdr::Error::Parameter(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            )))),
        },
    }
}

pub fn run(cli: Cli) -> Result<String> {
    let value = match cli.command {
        Command::Synthesize(a) => cmd_synthesize(&a)?,
        Command::Mask(a) => cmd_mask(&a)?,
        Command::Fuse(a) => cmd_fuse(&a)?,
        Command::Infer(a) => cmd_infer(&a)?,
        Command::Eval(a) => cmd_eval(&a)?,
        Command::Bench(a) => cmd_bench(&a)?,
        Command::InitWeights(a) => cmd_init_weights(&a)?,
    };
    to_sorted_json(&value)
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(rawhdr::Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("input file {} does not exist", path.display()),
        ))
        .into());
    }
    Ok(())
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(rawhdr::Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", p.display()),
        ))
        .into()),
        _ => Ok(()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_arch(path: Option<&Path>) -> Result<ArchConfig> {
    let cfg = match path {
        Some(p) => {
            require_file(p)?;
            read_json(p)?
        }
        None => ArchConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_clean(path: &Path) -> Result<PackedRaw> {
    let raw = read_raw(path).with_context(|| format!("reading raw {}", path.display()))?;
    Ok(normalize_levels(&raw))
}

fn file_entry(dir: &Path, name: &str) -> Result<Value> {
    Ok(json!({ "file": name, "sha256": sha256_file(&dir.join(name))? }))
}

pub fn cmd_synthesize(a: &SynthesizeArgs) -> Result<Value> {
    require_file(&a.clean1)?;
    require_file(&a.clean2)?;
    let mut cfg: PairConfig = match &a.config {
        Some(p) => {
            require_file(p)?;
            read_json(p)?
        }
        None => PairConfig::default(),
    };
    cfg.seed = a.seed;
    if a.ratio.is_some() {
        cfg.ratio = a.ratio;
    }
    if a.noiseless {
        cfg.noise_long = NoiseModel::noiseless(ExposureLabel::Long);
        cfg.noise_short = NoiseModel::noiseless(ExposureLabel::Short);
    }
    cfg.validate()?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let c1 = load_clean(&a.clean1)?;
    let c2 = load_clean(&a.clean2)?;
    let s = build_quadruplet(&c1, &c2, &cfg)?;
    let mask = s.mask.as_ref().context("quadruplet has no mask")?;
    for (name, t) in QUADRUPLET_FILES.iter().zip([&s.long.planes, &s.short.planes, &s.gt.planes, mask]) {
        write_tensor(a.out_dir.join(name), t)?;
    }
    let mut files = serde_json::Map::new();
    for name in QUADRUPLET_FILES {
        files.insert(name.trim_end_matches(".rten").to_string(), file_entry(&a.out_dir, name)?);
    }
    let manifest = json!({
        "format": "rawhdr-quadruplet",
        "version": 1,
        "seed": cfg.seed,
        "ratio": s.ratio,
        "bit_depth": cfg.bit_depth,
        "aligned": true,
        "noise_long": cfg.noise_long,
        "noise_short": cfg.noise_short,
        "motion": s.motion,
        "long_clipped": s.long_clipped,
        "shape": s.gt.planes.shape(),
        "files": files,
    });
    fs::write(a.out_dir.join(MANIFEST_FILE), to_sorted_json(&manifest)?)?;
    Ok(manifest)
}

pub fn cmd_mask(a: &MaskArgs) -> Result<Value> {
    require_file(&a.input)?;
    fs::create_dir_all(&a.out_dir)?;
    let t = read_tensor(&a.input)?;
    let (moved, mask, spec) = synth_motion(&PackedRaw::linear(t)?, a.seed)?;
    write_tensor(a.out_dir.join("moved.rten"), &moved.planes)?;
    write_tensor(a.out_dir.join("mask.rten"), &mask)?;
    let report = json!({
        "seed": a.seed,
        "motion": spec,
        "mask_pixels": mask.data().iter().filter(|&&v| v == 1.0).count(),
        "files": { "moved": file_entry(&a.out_dir, "moved.rten")?, "mask": file_entry(&a.out_dir, "mask.rten")? },
    });
    fs::write(a.out_dir.join("motion.json"), to_sorted_json(&report)?)?;
    Ok(report)
}

pub fn cmd_fuse(a: &FuseArgs) -> Result<Value> {
    require_file(&a.weights)?;
    require_parent(&a.out)?;
    let arch = load_arch(a.arch.as_deref())?;
    let w = Weights::load(&a.weights)?;
    if !w.has_tcb_tensors() {
        return Err(rawhdr::Error::Validation(format!(
            "{} is already fused (no multi-branch tensors); nothing to do",
            a.weights.display()
        ))
        .into());
    }
    let g = build_dualunet(&arch)?;
    let (fg, fw) = fuse_model(&g, &w)?;
    fw.save(&a.out)?;
    let before = count_params_flops(&g, a.height, a.width)?;
    let after = count_params_flops(&fg, a.height, a.width)?;
    log::info!(
        "params {} -> {}, FLOPs {} -> {} at {}x{}",
        before.params,
        after.params,
        before.flops,
        after.flops,
        a.height,
        a.width
    );
    Ok(json!({ "multibranch": before, "fused": after, "out": a.out.display().to_string() }))
}

pub fn cmd_infer(a: &InferArgs) -> Result<Value> {
    for p in [&a.weights, &a.long, &a.short] {
        require_file(p)?;
    }
    require_parent(&a.out)?;
    let arch = load_arch(a.arch.as_deref())?;
    let w = Weights::load(&a.weights)?;
    let g = graph_for_weights(&arch, &w)?;
    let long = read_tensor(&a.long)?;
    let short = read_tensor(&a.short)?;
    let out = forward(&g, &w, &short, &long)?;
    write_tensor(&a.out, &out)?;
    Ok(json!({
        "graph": if w.has_tcb_tensors() { "multibranch" } else { "fused" },
        "shape": out.shape(),
        "sha256": sha256_file(&a.out)?,
    }))
}

pub fn load_loss_weights(path: Option<&Path>) -> Result<LossWeights> {
    let w = match path {
        Some(p) => {
            require_file(p)?;
            read_json(p)?
        }
        None => LossWeights::default(),
    };
    w.validate()?;
    Ok(w)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Value> {
    if a.outputs.len() != a.gts.len() {
        bail!(rawhdr::Error::Parameter(format!(
            "{} outputs but {} ground truths",
            a.outputs.len(),
            a.gts.len()
        )));
    }
    if !a.masks.is_empty() && a.masks.len() != a.outputs.len() {
        bail!(rawhdr::Error::Parameter("give one --mask per pair or none".into()));
    }
    for p in a.outputs.iter().chain(&a.gts).chain(&a.masks) {
        require_file(p)?;
    }
    let weights = load_loss_weights(a.loss_weights.as_deref())?;
    let mut pairs = Vec::new();
    let mut reports = Vec::new();
    for (i, (op, gp)) in a.outputs.iter().zip(&a.gts).enumerate() {
        let out = read_tensor(op)?;
        let gt = read_tensor(gp)?;
        let metrics = MetricsReport::evaluate(&out, &gt).with_context(|| format!("evaluating {}", op.display()))?;
        let mut entry = json!({
            "output": op.display().to_string(),
            "gt": gp.display().to_string(),
            "metrics": metrics,
        });
        if a.losses {
            let mask: Option<Tensor<f32>> = a.masks.get(i).map(read_tensor).transpose()?;
            entry["losses"] = serde_json::to_value(total_loss(&out, &gt, mask.as_ref(), &weights)?)?;
        }
        reports.push(metrics);
        pairs.push(entry);
    }
    let mut report = json!({ "pairs": pairs, "mean": MetricsReport::mean(&reports) });
    if a.losses {
        report["loss_weights"] = serde_json::to_value(weights)?;
    }
    Ok(report)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<Value> {
    let arch = load_arch(a.arch.as_deref())?;
    let g = build_dualunet(&arch)?;
    let w = init_weights(&g, a.seed)?;
    let (fg, fw) = fuse_model(&g, &w)?;
    let cfg = BenchConfig { height: a.height, width: a.width, repeats: a.repeats, warmup: a.warmup, seed: a.seed };
    let r = benchmark((&g, &w), (&fg, &fw), &cfg)?;
    let mut v = serde_json::to_value(&r)?;
    v["fused_not_slower"] = json!(r.median_fused_ms <= r.median_multibranch_ms);
    Ok(v)
}

pub fn cmd_init_weights(a: &InitWeightsArgs) -> Result<Value> {
    require_parent(&a.out)?;
    let arch = load_arch(a.arch.as_deref())?;
    let g = build_dualunet(&arch)?;
    let mut w = init_weights(&g, a.seed)?;
    if a.fused {
        w = fuse_model(&g, &w)?.1;
    }
    w.save(&a.out)?;
    Ok(json!({
        "out": a.out.display().to_string(),
        "seed": a.seed,
        "tensors": w.len(),
        "params": w.param_count(),
        "fused": a.fused,
    }))
}
