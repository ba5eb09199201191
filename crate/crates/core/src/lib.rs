//! Raw-domain dual-exposure HDR toolkit.
//!
//! The crate covers three pieces of a short/long exposure raw HDR workflow:
//!
//! * [`raw`], [`sensor`] and [`pair`] turn clean Bayer captures into noisy
//!   short/long training pairs with a noise-free ground truth and a synthetic
//!   motion mask.
//! * [`repnet`] describes the DualUNet graph, its multi-branch topological
//!   convolution blocks (TCB) and the analytic fusion of every block into a
//!   single 3×3 convolution.
//! * [`engine`] executes those graphs on the CPU, while [`metrics`] and
//!   [`losses`] score the outputs.
//!
//! Inner loops are data-parallel through rayon when the `parallel` feature is
//! enabled (the default) and fall back to plain sequential iteration otherwise.
//! Results are bitwise independent of the thread count.

pub mod engine;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod pair;
pub mod par;
pub mod raw;
pub mod repnet;
pub mod rng;
pub mod sensor;

pub use engine::tensor::{Element, Tensor};
pub use error::{Error, Result};
pub use raw::{BayerImage, BayerPattern, PackedRaw};
