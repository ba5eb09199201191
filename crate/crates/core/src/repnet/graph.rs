//! Declarative DualUNet graphs.
//!
//! A [`ModelGraph`] is a list of nodes in topological order; every node names
//! the earlier nodes it reads. Parameters live outside the graph in
//! [`Weights`](super::Weights), keyed by node name.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

use super::tcb::TcbVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Channel concatenation followed by a mixing convolution.
    Concat,
    /// Elementwise sum.
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// Every learnable 3×3 except the head is a TCB.
    Tcb,
    /// Plain 3×3 convolutions throughout.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Channels of each packed input.
    pub in_channels: usize,
    /// Feature width at each encoder scale, shallowest first.
    pub widths: Vec<usize>,
    pub fusion: FusionMode,
    /// TCB expand ratio: `c_mid = expansion * c_out`.
    pub expansion: usize,
    pub block: BlockKind,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { in_channels: 4, widths: vec![16, 32, 64], fusion: FusionMode::Concat, expansion: 2, block: BlockKind::Tcb }
    }
}

impl ArchConfig {
    pub fn plain(&self) -> Self {
        ArchConfig { block: BlockKind::Plain, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Parameter("in_channels must be positive".into()));
        }
        if self.widths.is_empty() {
            return Err(Error::Parameter("at least one encoder scale is required".into()));
        }
        if let Some(w) = self.widths.iter().find(|&&w| w == 0 || w % 4 != 0) {
            return Err(Error::Parameter(format!("widths must be positive multiples of 4 for pixel shuffle, got {w}")));
        }
        if self.expansion == 0 {
            return Err(Error::Parameter("expansion must be at least 1".into()));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        2 << self.widths.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Input,
    Stem,
    Encoder,
    Fusion,
    Decoder,
    Head,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    Input { name: String, channels: usize },
    Conv3x3 { c_in: usize, c_out: usize },
    Tcb { c_in: usize, c_out: usize, c_mid: usize, variant: TcbVariant, identity: bool },
    Relu,
    PixelUnshuffle2,
    PixelShuffle2,
    Concat,
    Add,
    Output,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Conv3x3 { .. } => "conv3x3",
            Op::Tcb { .. } => "tcb",
            Op::Relu => "relu",
            Op::PixelUnshuffle2 => "pixel_unshuffle2",
            Op::PixelShuffle2 => "pixel_shuffle2",
            Op::Concat => "concat",
            Op::Add => "add",
            Op::Output => "output",
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, Op::Conv3x3 { .. } | Op::Tcb { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
    pub stage: Stage,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub nodes: Vec<Node>,
}

impl ModelGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.inputs.len()).sum()
    }

    pub fn count_kind(&self, kind: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| matches!(&n.op, Op::Input { name: nm, .. } if nm == name))
    }

    pub fn output_index(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.op == Op::Output)
    }

    /// Structural checks: arity, topological order, unique names, a single
    /// output fed by a plain convolution, TCB variants matching their stage,
    /// and channel consistency along every edge.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        let mut names = HashSet::new();
        for (idx, n) in self.nodes.iter().enumerate() {
            if !names.insert(n.name.as_str()) {
                return bad(format!("duplicate node name `{}`", n.name));
            }
            if let Some(&j) = n.inputs.iter().find(|&&j| j >= idx) {
                return bad(format!("node `{}` reads node {j}, which is not earlier", n.name));
            }
            let ok = match n.op {
                Op::Input { .. } => n.inputs.is_empty(),
                Op::Concat => n.inputs.len() >= 2,
                Op::Add => n.inputs.len() == 2,
                _ => n.inputs.len() == 1,
            };
            if !ok {
                return bad(format!("node `{}` ({}) has {} inputs", n.name, n.op.kind(), n.inputs.len()));
            }
            if let Op::Tcb { variant, identity, c_in, c_out, .. } = n.op {
                let want = if n.stage == Stage::Decoder { TcbVariant::Decoder } else { TcbVariant::Encoder };
                if variant != want {
                    return bad(format!("TCB `{}` in stage {:?} must be {:?} variant", n.name, n.stage, want));
                }
                if identity && c_in != c_out {
                    return bad(format!("TCB `{}` has an identity branch with {c_in} != {c_out}", n.name));
                }
            }
        }
        let outputs: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].op == Op::Output).collect();
        if outputs.len() != 1 {
            return bad(format!("graph must have exactly one output, found {}", outputs.len()));
        }
        // walk back through parameter-free ops to the last learnable layer
        let mut cur = self.nodes[outputs[0]].inputs[0];
        while !self.nodes[cur].op.is_learnable() {
            match self.nodes[cur].op {
                Op::PixelShuffle2 | Op::PixelUnshuffle2 => cur = self.nodes[cur].inputs[0],
                _ => return bad("the output must be produced by a convolution".into()),
            }
        }
        if !matches!(self.nodes[cur].op, Op::Conv3x3 { .. }) {
            return bad(format!("final layer `{}` must be a plain 3x3 convolution", self.nodes[cur].name));
        }
        self.infer_channels().map(|_| ())
    }

    /// Channel count of every node's output.
    pub fn infer_channels(&self) -> Result<Vec<usize>> {
        let mut ch = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let ins: Vec<usize> = n.inputs.iter().map(|&i| ch[i]).collect();
            let mismatch = |want: usize| {
                dim_err(format!("node `{}` expects {want} channels, got {}", n.name, ins[0]))
            };
            let c = match &n.op {
                Op::Input { channels, .. } => *channels,
                Op::Conv3x3 { c_in, c_out } | Op::Tcb { c_in, c_out, .. } => {
                    if ins[0] != *c_in {
                        return mismatch(*c_in);
                    }
                    *c_out
                }
                Op::Relu | Op::Output => ins[0],
                Op::PixelUnshuffle2 => 4 * ins[0],
                Op::PixelShuffle2 => {
                    if !ins[0].is_multiple_of(4) {
                        return dim_err(format!("node `{}` shuffles {} channels", n.name, ins[0]));
                    }
                    ins[0] / 4
                }
                Op::Concat => ins.iter().sum(),
                Op::Add => {
                    if ins[0] != ins[1] {
                        return mismatch(ins[0]);
                    }
                    ins[0]
                }
            };
            ch.push(c);
        }
        Ok(ch)
    }

    /// Output shape of every node for inputs of spatial size `h × w`.
    pub fn infer_shapes(&self, h: usize, w: usize) -> Result<Vec<[usize; 3]>> {
        let channels = self.infer_channels()?;
        let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(self.nodes.len());
        for (n, &c) in self.nodes.iter().zip(&channels) {
            let [_, ih, iw] = n.inputs.first().map_or([0, h, w], |&i| shapes[i]);
            let (oh, ow) = match n.op {
                Op::PixelUnshuffle2 => {
                    if ih % 2 != 0 || iw % 2 != 0 || ih == 0 || iw == 0 {
                        return dim_err(format!("node `{}` cannot unshuffle {ih}x{iw}", n.name));
                    }
                    (ih / 2, iw / 2)
                }
                Op::PixelShuffle2 => (2 * ih, 2 * iw),
                _ => (ih, iw),
            };
            for &i in &n.inputs {
                if shapes[i][1] != ih || shapes[i][2] != iw {
                    return dim_err(format!("node `{}` joins tensors of different spatial size", n.name));
                }
            }
            shapes.push([c, oh, ow]);
        }
        Ok(shapes)
    }

    /// Shape produced for `[C, h, w]` inputs, after checking the input size.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        let shapes = self.infer_shapes(h, w)?;
        let out = self.output_index().ok_or_else(|| Error::Validation("graph has no output".into()))?;
        Ok(shapes[out])
    }
}

struct Builder<'a> {
    cfg: &'a ArchConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn push(&mut self, name: impl Into<String>, stage: Stage, op: Op, inputs: &[usize]) -> usize {
        self.nodes.push(Node { name: name.into(), op, inputs: inputs.to_vec(), stage });
        self.nodes.len() - 1
    }

    /// Learnable 3×3 layer: a TCB or a plain convolution depending on config.
    fn conv(&mut self, name: String, stage: Stage, c_in: usize, c_out: usize, input: usize) -> usize {
        let op = match self.cfg.block {
            BlockKind::Plain => Op::Conv3x3 { c_in, c_out },
            BlockKind::Tcb => Op::Tcb {
                c_in,
                c_out,
                c_mid: self.cfg.expansion * c_out,
                variant: if stage == Stage::Decoder { TcbVariant::Decoder } else { TcbVariant::Encoder },
                identity: c_in == c_out,
            },
        };
        self.push(name, stage, op, &[input])
    }

    fn relu(&mut self, name: String, stage: Stage, input: usize) -> usize {
        self.push(name, stage, Op::Relu, &[input])
    }
}

/// Builds the dual-encoder U-Net.
///
/// Both packed inputs are pixel-unshuffled once by a stem. At each scale the
/// short (reference) encoder runs `[Down, Conv, ReLU]`, the long encoder runs
/// `[Down, Conv, ReLU, Conv, ReLU]`, and the long features are fused into the
/// short ones. The two encoder streams stay independent; fused features feed
/// the decoder skips. The decoder upsamples with pixel shuffle, concatenates
/// the matching skip, and applies `[Conv, ReLU]`. A plain 3×3 head followed
/// by pixel shuffle restores the input resolution.
pub fn build_dualunet(cfg: &ArchConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut b = Builder { cfg, nodes: Vec::new() };
    let c0 = cfg.in_channels;
    let short = b.push("short", Stage::Input, Op::Input { name: "short".into(), channels: c0 }, &[]);
    let long = b.push("long", Stage::Input, Op::Input { name: "long".into(), channels: c0 }, &[]);
    let stem_s = b.push("stem_s", Stage::Stem, Op::PixelUnshuffle2, &[short]);
    let stem_l = b.push("stem_l", Stage::Stem, Op::PixelUnshuffle2, &[long]);
    let stem_c = 4 * c0;

    let (mut s, mut l, mut c_prev) = (stem_s, stem_l, stem_c);
    let mut fused = Vec::with_capacity(cfg.widths.len());
    for (k, &w) in cfg.widths.iter().enumerate() {
        let k = k + 1;
        let e = Stage::Encoder;
        let d = b.push(format!("enc_s{k}.down"), e, Op::PixelUnshuffle2, &[s]);
        let c = b.conv(format!("enc_s{k}.conv"), e, 4 * c_prev, w, d);
        s = b.relu(format!("enc_s{k}.relu"), e, c);

        let d = b.push(format!("enc_l{k}.down"), e, Op::PixelUnshuffle2, &[l]);
        let c = b.conv(format!("enc_l{k}.conv1"), e, 4 * c_prev, w, d);
        let r = b.relu(format!("enc_l{k}.relu1"), e, c);
        let c = b.conv(format!("enc_l{k}.conv2"), e, w, w, r);
        l = b.relu(format!("enc_l{k}.relu2"), e, c);

        let f = Stage::Fusion;
        let out = match cfg.fusion {
            FusionMode::Concat => {
                let cat = b.push(format!("fuse{k}.cat"), f, Op::Concat, &[s, l]);
                let m = b.conv(format!("fuse{k}.mix"), f, 2 * w, w, cat);
                b.relu(format!("fuse{k}.relu"), f, m)
            }
            FusionMode::Add => b.push(format!("fuse{k}.add"), f, Op::Add, &[s, l]),
        };
        fused.push(out);
        c_prev = w;
    }

    let n = cfg.widths.len();
    let (mut x, mut c_x) = (fused[n - 1], cfg.widths[n - 1]);
    for k in (0..n).rev() {
        let (skip, c_skip, c_out) = if k == 0 {
            (stem_s, stem_c, cfg.widths[0])
        } else {
            (fused[k - 1], cfg.widths[k - 1], cfg.widths[k - 1])
        };
        let d = Stage::Decoder;
        let up = b.push(format!("dec{k}.up"), d, Op::PixelShuffle2, &[x]);
        let cat = b.push(format!("dec{k}.cat"), d, Op::Concat, &[up, skip]);
        let c = b.conv(format!("dec{k}.conv"), d, c_x / 4 + c_skip, c_out, cat);
        x = b.relu(format!("dec{k}.relu"), d, c);
        c_x = c_out;
    }

    let head = b.push("head.conv", Stage::Head, Op::Conv3x3 { c_in: c_x, c_out: 4 * c0 }, &[x]);
    let up = b.push("head.up", Stage::Head, Op::PixelShuffle2, &[head]);
    b.push("output", Stage::Output, Op::Output, &[up]);

    let g = ModelGraph { nodes: b.nodes };
    g.validate()?;
    Ok(g)
}

/// Replaces every TCB node by a plain 3×3 convolution of the same shape.
/// Topology and names are unchanged; already-plain graphs pass through.
pub fn fuse_graph(g: &ModelGraph) -> ModelGraph {
    let nodes = g
        .nodes
        .iter()
        .map(|n| match n.op {
            Op::Tcb { c_in, c_out, .. } => Node { op: Op::Conv3x3 { c_in, c_out }, ..n.clone() },
            _ => n.clone(),
        })
        .collect();
    ModelGraph { nodes }
}
