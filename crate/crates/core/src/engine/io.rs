//! `RTEN` tensor files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "RTEN"
//! 4       4           version (u32 LE, currently 1)
//! 8       4           ndim (u32 LE)
//! 12      4*ndim      dims (u32 LE each)
//! ...     4*prod      payload, f32 LE, row-major
//! ```
//!
//! Rank 3 files map directly onto `[C, H, W]`; rank 2 files are read as a
//! single channel.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RTEN";
pub const VERSION: u32 = 1;

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 12 + 4 * t.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32> {
    let bytes = buf
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::Format("truncated RTEN header".into()))?;
    *pos += 4;
    Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
}

pub fn decode_tensor(buf: &[u8]) -> Result<Tensor<f32>> {
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(Error::Format("not an RTEN file (bad magic)".into()));
    }
    let mut pos = 4;
    let version = read_u32(buf, &mut pos)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported RTEN version {version}")));
    }
    let ndim = read_u32(buf, &mut pos)? as usize;
    if !(1..=3).contains(&ndim) {
        return Err(Error::Format(format!("unsupported RTEN rank {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(read_u32(buf, &mut pos)? as usize);
    }
    let shape = match dims.as_slice() {
        [n] => [1, 1, *n],
        [h, w] => [1, *h, *w],
        [c, h, w] => [*c, *h, *w],
        _ => unreachable!(),
    };
    let n: usize = shape.iter().product();
    let payload = &buf[pos..];
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "RTEN payload has {} bytes, expected {}",
            payload.len(),
            4 * n
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_tensor(&buf)
}
