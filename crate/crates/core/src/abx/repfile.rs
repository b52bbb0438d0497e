use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const REP_MAGIC: &[u8; 4] = b"REPF";
pub const REP_VERSION: u32 = 1;

/// Writes a `[frames, dim]` matrix: magic, version, frame count, width
/// (little-endian `u32`), then row-major little-endian `f32` values.
pub fn write_rep(path: &Path, rep: &Tensor<f32>) -> Result<()> {
    let (frames, dim) = rep
        .dims2()
        .ok_or_else(|| Error::invalid(format!("representation must be a matrix, got {:?}", rep.shape())))?;
    let mut buf = Vec::with_capacity(16 + 4 * rep.len());
    buf.extend_from_slice(REP_MAGIC);
    for v in [REP_VERSION, frames as u32, dim as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in rep.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_rep(path: &Path) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != REP_MAGIC {
        return Err(Error::format(path, "not a representation file (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != REP_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", word(4))));
    }
    let (frames, dim) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + 4 * frames * dim {
        return Err(Error::format(
            path,
            format!("header promises {frames} x {dim} values but the file holds {} bytes", bytes.len()),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(&[frames, dim], data).map_err(|e| Error::format(path, e.to_string()))
}
