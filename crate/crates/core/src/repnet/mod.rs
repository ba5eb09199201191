//! DualUNet graphs, the TCB and its fusion into plain 3×3 convolutions.

pub mod cost;
pub mod graph;
pub mod kernels;
pub mod tcb;
pub mod weights;

pub use cost::{count_params_flops, CostReport};
pub use graph::{build_dualunet, fuse_graph, ArchConfig, BlockKind, FusionMode, ModelGraph, Node, Op, Stage};
pub use kernels::{fixed_kernels, FixedKernels};
pub use tcb::{tcb_forward, tcb_fuse, Conv, LaplacianBranch, TcbParams, TcbVariant};
pub use weights::{fuse_model, graph_for_weights, init_weights, validate_weights, Weights};
