//! Parameter and FLOP accounting.
//!
//! FLOPs count one multiply and one add per MAC: a `k×k` convolution costs
//! `2·k²·C_in·C_out·H·W`, a fixed depthwise 3×3 costs `2·9·C·H·W`. Bias adds,
//! branch sums, activations and reshuffles are not counted.

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::graph::{ModelGraph, Op};
use super::tcb::TcbVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub flops: u64,
    pub height: usize,
    pub width: usize,
    pub tcb_nodes: usize,
    pub conv_nodes: usize,
}

fn conv_params(c_in: usize, c_out: usize, k: usize) -> u64 {
    (c_out * c_in * k * k + c_out) as u64
}

fn conv_flops(c_in: usize, c_out: usize, k: usize, hw: usize) -> u64 {
    2 * (k * k * c_in * c_out * hw) as u64
}

/// `(params, flops)` of one node at output plane size `hw`.
pub fn op_cost(op: &Op, hw: usize) -> (u64, u64) {
    match *op {
        Op::Conv3x3 { c_in, c_out } => (conv_params(c_in, c_out, 3), conv_flops(c_in, c_out, 3, hw)),
        Op::Tcb { c_in, c_out, c_mid, variant, .. } => {
            let derivs: u64 = if variant == TcbVariant::Decoder { 3 } else { 2 };
            let pres: u64 = if variant == TcbVariant::Decoder { 2 } else { 1 };
            let params = conv_params(c_in, c_out, 3)
                + conv_params(c_in, c_mid, 1)
                + conv_params(c_mid, c_out, 3)
                + pres * conv_params(c_in, c_out, 1)
                + derivs * c_out as u64
                + conv_params(c_in, c_out, 1);
            let flops = conv_flops(c_in, c_out, 3, hw)
                + conv_flops(c_in, c_mid, 1, hw)
                + conv_flops(c_mid, c_out, 3, hw)
                + pres * conv_flops(c_in, c_out, 1, hw)
                + derivs * 2 * 9 * (c_out * hw) as u64
                + conv_flops(c_in, c_out, 1, hw);
            (params, flops)
        }
        _ => (0, 0),
    }
}

pub fn count_params_flops(g: &ModelGraph, height: usize, width: usize) -> Result<CostReport> {
    let shapes = g.infer_shapes(height, width)?;
    let mut r = CostReport { params: 0, flops: 0, height, width, tcb_nodes: 0, conv_nodes: 0 };
    for (n, s) in g.nodes.iter().zip(&shapes) {
        let (p, f) = op_cost(&n.op, s[1] * s[2]);
        r.params += p;
        r.flops += f;
        match n.op {
            Op::Tcb { .. } => r.tcb_nodes += 1,
            Op::Conv3x3 { .. } => r.conv_nodes += 1,
            _ => {}
        }
    }
    Ok(r)
}
