//! Seeded random streams.
//!
//! Every random draw in the crate comes from `ChaCha8Rng`, whose output is
//! fixed by its algorithm and therefore identical on every platform. A single
//! user seed is split into independent streams with [`derive_seed`]:
//!
//! ```text
//! derive_seed(seed, tag) = splitmix64(seed ^ splitmix64(tag + 1))
//! ```
//!
//! where `splitmix64` is the standard 64-bit finalizer (Steele, Lea & Flood).
//! Stream tags used by the pipeline are listed in [`stream`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags for [`derive_seed`].
pub mod stream {
    pub const RATIO: u64 = 1;
    pub const LONG_NOISE: u64 = 2;
    pub const SHORT_NOISE: u64 = 3;
    pub const MOTION: u64 = 4;
    pub const PATCHES: u64 = 5;
    pub const WEIGHTS: u64 = 6;
    /// Batch item `i` uses `derive_seed(seed, BATCH_BASE + i)`.
    pub const BATCH_BASE: u64 = 1 << 32;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(1)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
