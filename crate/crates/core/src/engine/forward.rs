use crate::error::{dim_err, Error, Result};
use crate::repnet::tcb::{tcb_forward, Conv, TcbParams};
use crate::repnet::{validate_weights, ModelGraph, Op, Weights};

use super::ops::{add, concat, pixel_shuffle2, pixel_unshuffle2, relu};
use super::tensor::Tensor;

enum Layer {
    None,
    Conv(Conv<f32>),
    Tcb(Box<TcbParams<f32>>),
}

/// A graph with its parameters resolved, ready to run repeatedly.
pub struct PreparedModel<'g> {
    graph: &'g ModelGraph,
    layers: Vec<Layer>,
    last_use: Vec<usize>,
}

impl<'g> PreparedModel<'g> {
    pub fn new(graph: &'g ModelGraph, weights: &Weights) -> Result<Self> {
        graph.validate()?;
        validate_weights(graph, weights)?;
        let layers = graph
            .nodes
            .iter()
            .map(|n| match n.op {
                Op::Conv3x3 { c_in, c_out } => Ok(Layer::Conv(weights.conv(&n.name, c_out, c_in, 3)?)),
                Op::Tcb { .. } => Ok(Layer::Tcb(Box::new(weights.tcb(&n.name, &n.op)?))),
                _ => Ok(Layer::None),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut last_use: Vec<usize> = (0..graph.nodes.len()).collect();
        for (i, n) in graph.nodes.iter().enumerate() {
            for &j in &n.inputs {
                last_use[j] = last_use[j].max(i);
            }
        }
        Ok(PreparedModel { graph, layers, last_use })
    }

    pub fn graph(&self) -> &ModelGraph {
        self.graph
    }

    /// Runs the graph on one short/long pair. Intermediate tensors are freed
    /// as soon as their last consumer has run.
    pub fn run(&self, short: &Tensor<f32>, long: &Tensor<f32>) -> Result<Tensor<f32>> {
        short.check_same_shape(long)?;
        let [_, h, w] = short.shape();
        // also checks divisibility of the spatial dims
        self.graph.infer_shapes(h, w)?;
        let mut vals: Vec<Option<Tensor<f32>>> = vec![None; self.graph.nodes.len()];
        for (i, n) in self.graph.nodes.iter().enumerate() {
            let arg = |k: usize| -> Result<&Tensor<f32>> {
                vals[n.inputs[k]]
                    .as_ref()
                    .ok_or_else(|| Error::Validation(format!("node `{}` input was released early", n.name)))
            };
            let out = match (&n.op, &self.layers[i]) {
                (Op::Input { name, channels }, _) => {
                    let t = match name.as_str() {
                        "short" => short,
                        "long" => long,
                        other => return Err(Error::Validation(format!("unknown graph input `{other}`"))),
                    };
                    if t.channels() != *channels {
                        return dim_err(format!("input `{name}` needs {channels} channels, got {}", t.channels()));
                    }
                    t.clone()
                }
                (Op::Conv3x3 { .. }, Layer::Conv(c)) => c.forward(arg(0)?, None)?,
                (Op::Tcb { .. }, Layer::Tcb(p)) => tcb_forward(p, arg(0)?)?,
                (Op::Relu, _) => relu(arg(0)?),
                (Op::PixelUnshuffle2, _) => pixel_unshuffle2(arg(0)?)?,
                (Op::PixelShuffle2, _) => pixel_shuffle2(arg(0)?)?,
                (Op::Concat, _) => {
                    let parts = (0..n.inputs.len()).map(arg).collect::<Result<Vec<_>>>()?;
                    concat(&parts)?
                }
                (Op::Add, _) => add(arg(0)?, arg(1)?)?,
                (Op::Output, _) => arg(0)?.clone(),
                _ => return Err(Error::Validation(format!("node `{}` has no parameters", n.name))),
            };
            vals[i] = Some(out);
            for &j in &n.inputs {
                if self.last_use[j] == i {
                    vals[j] = None;
                }
            }
        }
        let out = self.graph.output_index().ok_or_else(|| Error::Validation("graph has no output".into()))?;
        vals[out].take().ok_or_else(|| Error::Validation("output was not produced".into()))
    }
}

/// Executes `g` with `weights` on a packed short/long pair.
pub fn forward(g: &ModelGraph, weights: &Weights, short: &Tensor<f32>, long: &Tensor<f32>) -> Result<Tensor<f32>> {
    PreparedModel::new(g, weights)?.run(short, long)
}
