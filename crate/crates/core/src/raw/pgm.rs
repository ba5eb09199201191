//! Binary PGM (`P5`) mosaics with a JSON sidecar.
//!
//! Samples wider than 8 bits are stored as two bytes, most significant first,
//! per the Netpbm format. The header `maxval` is `2^bit_depth - 1`. The
//! sidecar sits next to the image with a `.json` extension and holds
//! `{pattern, black_level, white_level, bit_depth}`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{BayerImage, RawMeta};

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

pub fn encode_pgm(raw: &BayerImage) -> Vec<u8> {
    let maxval = raw.meta().max_dn();
    let mut out = format!("P5\n{} {}\n{}\n", raw.width(), raw.height(), maxval).into_bytes();
    if maxval > 255 {
        for &v in raw.data() {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(raw.data().iter().map(|&v| v as u8));
    }
    out
}

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    if buf.len() < 2 || &buf[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("PGM header value out of range".into()))?;
    }
    // exactly one whitespace byte before the raster
    if !buf.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("malformed PGM header".into()));
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    Ok(Header { width: width as usize, height: height as usize, maxval, data_start: pos + 1 })
}

/// Decodes the raster; `meta` supplies the colour layout and levels.
pub fn decode_pgm(buf: &[u8], meta: RawMeta) -> Result<BayerImage> {
    let h = parse_header(buf)?;
    let n = h.width * h.height;
    let raster = &buf[h.data_start..];
    let data: Vec<u16> = if h.maxval > 255 {
        if raster.len() != 2 * n {
            return Err(Error::Format(format!("PGM raster has {} bytes, expected {}", raster.len(), 2 * n)));
        }
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        if raster.len() != n {
            return Err(Error::Format(format!("PGM raster has {} bytes, expected {n}", raster.len())));
        }
        raster.iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(v) = data.iter().find(|&&v| u32::from(v) > h.maxval) {
        return Err(Error::Format(format!("PGM sample {v} exceeds maxval {}", h.maxval)));
    }
    BayerImage::new(h.width, h.height, data, meta)
}

pub fn write_raw(path: impl AsRef<Path>, raw: &BayerImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(raw))?;
    let meta = serde_json::to_value(raw.meta())?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<BayerImage> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let meta: RawMeta = serde_json::from_slice(&fs::read(&side).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", side.display())))
    })?)?;
    let buf = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decode_pgm(&buf, meta)
}
