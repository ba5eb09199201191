//! Minimal CPU executor for [`ModelGraph`](crate::repnet::ModelGraph).
//!
//! Convolutions accumulate in double precision and round once at store, and
//! each output element is produced by exactly one task with a fixed summation
//! order. Outputs are therefore bitwise stable across thread counts.

pub mod bench;
pub mod forward;
pub mod io;
pub mod ops;
pub mod tensor;

pub use bench::{benchmark, median, BenchConfig, BenchReport};
pub use forward::{forward, PreparedModel};
pub use ops::{
    add, concat, conv2d, conv2d_1x1, conv2d_3x3, depthwise_3x3, pixel_shuffle2,
    pixel_unshuffle2, relu,
};
pub use tensor::{Element, Tensor};
