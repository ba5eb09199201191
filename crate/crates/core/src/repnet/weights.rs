//! Named parameter storage and the on-disk weight manifest.
//!
//! A manifest is a JSON header next to a raw blob:
//!
//! ```json
//! {"format": "rawhdr-weights", "version": 1, "blob": "model.bin",
//!  "tensors": [{"name": "head.conv.bias", "shape": [16], "dtype": "f32", "offset": 0}, ...]}
//! ```
//!
//! The blob holds every tensor as little-endian IEEE-754 single precision,
//! concatenated in header order (sorted by name). Offsets are in bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};

use super::graph::{ModelGraph, Op};
use super::tcb::{tcb_fuse, Conv, LaplacianBranch, TcbParams, TcbVariant};

pub const FORMAT: &str = "rawhdr-weights";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Weights {
    tensors: BTreeMap<String, WeightTensor>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    blob: String,
    tensors: Vec<ManifestEntry>,
}

/// Blob file written next to a manifest: same stem, `.bin` extension.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl Weights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Dimension(format!(
                "tensor `{name}` has shape {shape:?} but {} values",
                data.len()
            )));
        }
        self.tensors.insert(name, WeightTensor { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.get(name)
    }

    /// Looks up a tensor and checks its shape.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let t = self.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if t.shape != shape {
            return Err(Error::Dimension(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(&t.data)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Whether any multi-branch TCB tensor is present.
    pub fn has_tcb_tensors(&self) -> bool {
        self.names().any(|n| n.ends_with(".main.weight"))
    }

    pub fn to_manifest(&self, blob_name: &str) -> Result<(String, Vec<u8>)> {
        let mut blob = Vec::with_capacity(4 * self.param_count());
        let mut entries = Vec::with_capacity(self.len());
        for (name, t) in &self.tensors {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                dtype: "f32".into(),
                offset: blob.len() as u64,
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let m = Manifest { format: FORMAT.into(), version: FORMAT_VERSION, blob: blob_name.into(), tensors: entries };
        Ok((serde_json::to_string_pretty(&m)? + "\n", blob))
    }

    pub fn from_manifest(header: &str, blob: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_str(header)?;
        if m.format != FORMAT || m.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported weight manifest {} v{}", m.format, m.version)));
        }
        let mut w = Weights::new();
        for e in m.tensors {
            if e.dtype != "f32" {
                return Err(Error::Format(format!("tensor `{}` has unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = usize::try_from(e.offset).map_err(|_| Error::Format("offset overflow".into()))?;
            let end = start
                .checked_add(4 * n)
                .filter(|&end| end <= blob.len())
                .ok_or_else(|| Error::Format(format!("tensor `{}` runs past the end of the blob", e.name)))?;
            let data = blob[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if w.tensors.contains_key(&e.name) {
                return Err(Error::Format(format!("duplicate tensor `{}`", e.name)));
            }
            w.insert(e.name, e.shape, data)?;
        }
        Ok(w)
    }

    /// Writes `path` (JSON header) and its blob, see [`blob_path`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let blob_file = blob_path(path);
        let blob_name = blob_file
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Parameter(format!("invalid manifest path {}", path.display())))?;
        let (header, blob) = self.to_manifest(blob_name)?;
        fs::write(path, header)?;
        fs::write(&blob_file, blob)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header = fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&header)?;
        if m.blob.contains('/') || m.blob.contains('\\') {
            return Err(Error::Format(format!("blob name `{}` must be a bare file name", m.blob)));
        }
        let blob = fs::read(path.with_file_name(&m.blob))?;
        Self::from_manifest(&header, &blob)
    }

    pub fn conv(&self, prefix: &str, c_out: usize, c_in: usize, k: usize) -> Result<Conv<f32>> {
        let weight = self.require(&format!("{prefix}.weight"), &[c_out, c_in, k, k])?.to_vec();
        let bias = self.require(&format!("{prefix}.bias"), &[c_out])?.to_vec();
        Conv::new(c_out, c_in, k, weight, bias)
    }

    pub fn insert_conv(&mut self, prefix: &str, c: &Conv<f32>) -> Result<()> {
        self.insert(format!("{prefix}.weight"), vec![c.c_out, c.c_in, c.k, c.k], c.weight.clone())?;
        self.insert(format!("{prefix}.bias"), vec![c.c_out], c.bias.clone())
    }

    fn vector(&self, name: &str, n: usize) -> Result<Vec<f32>> {
        Ok(self.require(name, &[n])?.to_vec())
    }

    pub fn tcb(&self, prefix: &str, op: &Op) -> Result<TcbParams<f32>> {
        let Op::Tcb { c_in, c_out, c_mid, variant, identity } = *op else {
            return Err(Error::Parameter(format!("node `{prefix}` is not a TCB")));
        };
        let laplacian = match variant {
            TcbVariant::Decoder => Some(LaplacianBranch {
                pre: self.conv(&format!("{prefix}.laplacian"), c_out, c_in, 1)?,
                scale: self.vector(&format!("{prefix}.laplacian.scale"), c_out)?,
            }),
            TcbVariant::Encoder => None,
        };
        let p = TcbParams {
            variant,
            main: self.conv(&format!("{prefix}.main"), c_out, c_in, 3)?,
            expand: self.conv(&format!("{prefix}.expand"), c_mid, c_in, 1)?,
            squeeze: self.conv(&format!("{prefix}.squeeze"), c_out, c_mid, 3)?,
            sobel_pre: self.conv(&format!("{prefix}.sobel"), c_out, c_in, 1)?,
            sobel_scale_x: self.vector(&format!("{prefix}.sobel.scale_x"), c_out)?,
            sobel_scale_y: self.vector(&format!("{prefix}.sobel.scale_y"), c_out)?,
            laplacian,
            conv1x1: self.conv(&format!("{prefix}.conv1x1"), c_out, c_in, 1)?,
            use_identity: identity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn insert_tcb(&mut self, prefix: &str, p: &TcbParams<f32>) -> Result<()> {
        let co = p.c_out();
        self.insert_conv(&format!("{prefix}.main"), &p.main)?;
        self.insert_conv(&format!("{prefix}.expand"), &p.expand)?;
        self.insert_conv(&format!("{prefix}.squeeze"), &p.squeeze)?;
        self.insert_conv(&format!("{prefix}.sobel"), &p.sobel_pre)?;
        self.insert(format!("{prefix}.sobel.scale_x"), vec![co], p.sobel_scale_x.clone())?;
        self.insert(format!("{prefix}.sobel.scale_y"), vec![co], p.sobel_scale_y.clone())?;
        if let Some(l) = &p.laplacian {
            self.insert_conv(&format!("{prefix}.laplacian"), &l.pre)?;
            self.insert(format!("{prefix}.laplacian.scale"), vec![co], l.scale.clone())?;
        }
        self.insert_conv(&format!("{prefix}.conv1x1"), &p.conv1x1)
    }
}

/// Tensor names and shapes a graph needs, in node order.
pub fn expected_tensors(g: &ModelGraph) -> Vec<(String, Vec<usize>)> {
    fn conv_entries(out: &mut Vec<(String, Vec<usize>)>, name: String, co: usize, ci: usize, k: usize) {
        out.push((format!("{name}.weight"), vec![co, ci, k, k]));
        out.push((format!("{name}.bias"), vec![co]));
    }
    let mut out = Vec::new();
    for n in &g.nodes {
        let p = &n.name;
        match n.op {
            Op::Conv3x3 { c_in, c_out } => conv_entries(&mut out, p.clone(), c_out, c_in, 3),
            Op::Tcb { c_in, c_out, c_mid, variant, .. } => {
                conv_entries(&mut out, format!("{p}.main"), c_out, c_in, 3);
                conv_entries(&mut out, format!("{p}.expand"), c_mid, c_in, 1);
                conv_entries(&mut out, format!("{p}.squeeze"), c_out, c_mid, 3);
                conv_entries(&mut out, format!("{p}.sobel"), c_out, c_in, 1);
                if variant == TcbVariant::Decoder {
                    conv_entries(&mut out, format!("{p}.laplacian"), c_out, c_in, 1);
                }
                conv_entries(&mut out, format!("{p}.conv1x1"), c_out, c_in, 1);
                out.push((format!("{p}.sobel.scale_x"), vec![c_out]));
                out.push((format!("{p}.sobel.scale_y"), vec![c_out]));
                if variant == TcbVariant::Decoder {
                    out.push((format!("{p}.laplacian.scale"), vec![c_out]));
                }
            }
            _ => {}
        }
    }
    out
}

/// Checks that `w` holds exactly the tensors `g` needs, with matching shapes.
pub fn validate_weights(g: &ModelGraph, w: &Weights) -> Result<()> {
    let expected = expected_tensors(g);
    for (name, shape) in &expected {
        let data = w.require(name, shape)?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!("tensor `{name}` has non-finite values")));
        }
    }
    if w.len() != expected.len() {
        let known: std::collections::HashSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        let extra: Vec<&str> = w.names().filter(|n| !known.contains(n)).take(3).collect();
        return Err(Error::Validation(format!(
            "weights do not match the graph; unexpected tensors such as {extra:?}"
        )));
    }
    Ok(())
}

/// Reproducible random weights for every learnable node. Node `i` draws from
/// its own stream, so adding nodes never perturbs earlier ones.
pub fn init_weights(g: &ModelGraph, seed: u64) -> Result<Weights> {
    g.validate()?;
    let base = derive_seed(seed, stream::WEIGHTS);
    let mut w = Weights::new();
    for (i, n) in g.nodes.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(base, i as u64));
        match n.op {
            Op::Conv3x3 { c_in, c_out } => {
                let bound = (6.0 / (9 * c_in) as f64).sqrt();
                w.insert_conv(&n.name, &Conv::random(c_out, c_in, 3, bound, 0.05, &mut rng))?;
            }
            Op::Tcb { c_in, c_out, c_mid, variant, identity } => {
                w.insert_tcb(&n.name, &TcbParams::random(c_in, c_out, c_mid, variant, identity, &mut rng)?)?;
            }
            _ => {}
        }
    }
    Ok(w)
}

/// Fuses every TCB of a graph and its weights. Fusion runs in double
/// precision and rounds once to single. Idempotent: a graph without TCB
/// nodes is returned unchanged.
pub fn fuse_model(g: &ModelGraph, w: &Weights) -> Result<(ModelGraph, Weights)> {
    g.validate()?;
    validate_weights(g, w)?;
    let mut out = Weights::new();
    for n in &g.nodes {
        match n.op {
            Op::Conv3x3 { c_in, c_out } => out.insert_conv(&n.name, &w.conv(&n.name, c_out, c_in, 3)?)?,
            Op::Tcb { .. } => {
                let p = w.tcb(&n.name, &n.op)?.cast::<f64>();
                out.insert_conv(&n.name, &tcb_fuse(&p)?.cast())?;
            }
            _ => {}
        }
    }
    let fg = super::graph::fuse_graph(g);
    validate_weights(&fg, &out)?;
    Ok((fg, out))
}

/// Infers whether weights belong to the multi-branch or the fused form of
/// `cfg` and builds the matching graph.
pub fn graph_for_weights(cfg: &super::graph::ArchConfig, w: &Weights) -> Result<ModelGraph> {
    let g = super::graph::build_dualunet(cfg)?;
    let g = if w.has_tcb_tensors() { g } else { super::graph::fuse_graph(&g) };
    validate_weights(&g, w)?;
    Ok(g)
}
