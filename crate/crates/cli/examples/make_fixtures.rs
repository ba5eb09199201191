//! Regenerates the 512×512 clean raw pair under `tests/fixtures/`.
//!
//! Integer arithmetic only, so the files are identical on every platform.
//! Usage: `cargo run -p rawhdr-cli --example make_fixtures -- <dir>`

use std::path::PathBuf;

use rawhdr::raw::pgm::write_raw;
use rawhdr::raw::{BayerImage, BayerPattern, RawMeta};

const SIDE: usize = 512;

fn scene(y: usize, x: usize) -> u32 {
    let (yi, xi) = (y as i64, x as i64);
    let mut v = 200 + 3 * xi + 2 * yi;
    if y < 128 && ((y / 8) + (x / 8)).is_multiple_of(2) {
        v += 150;
    }
    // bright disc that saturates the long exposure
    if (yi - 300).pow(2) + (xi - 200).pow(2) < 60 * 60 {
        v = 3900;
    }
    v.clamp(0, 4095) as u32
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("tests/fixtures"));
    std::fs::create_dir_all(&dir)?;
    let meta = RawMeta { pattern: BayerPattern::Rggb, black_level: 64, white_level: 4095, bit_depth: 12 };
    let first: Vec<u16> = (0..SIDE * SIDE).map(|i| scene(i / SIDE, i % SIDE) as u16).collect();
    // second frame: one-pixel horizontal drift and a 2% brightness drop
    let second: Vec<u16> = (0..SIDE * SIDE)
        .map(|i| {
            let (y, x) = (i / SIDE, i % SIDE);
            (scene(y, x.saturating_sub(1)) * 49 / 50) as u16
        })
        .collect();
    write_raw(dir.join("clean1.pgm"), &BayerImage::new(SIDE, SIDE, first, meta)?)?;
    write_raw(dir.join("clean2.pgm"), &BayerImage::new(SIDE, SIDE, second, meta)?)?;
    Ok(())
}
