//! Minimal 3-D `f32` tensor container: `"MHTK"`, three little-endian `u32`
//! dimensions, then row-major little-endian `f32` values.

use std::path::Path;

use crate::error::LoadError;

pub const TENSOR_MAGIC: &[u8; 4] = b"MHTK";
pub const TENSOR_HEADER_LEN: usize = 16;

pub fn encode_tensor(dims: [u32; 3], values: &[f32]) -> Vec<u8> {
    assert_eq!(
        values.len(),
        dims.iter().map(|&d| d as usize).product::<usize>(),
        "tensor payload does not match its dimensions"
    );
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + values.len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<([u32; 3], Vec<f32>), String> {
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err("truncated tensor header".into());
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err("bad tensor magic".into());
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let dims = [dim(0), dim(1), dim(2)];
    let n = dims.iter().map(|&d| d as usize).product::<usize>();
    let payload = &bytes[TENSOR_HEADER_LEN..];
    if payload.len() != n * 4 {
        return Err(format!("expected {} payload bytes, found {}", n * 4, payload.len()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dims, values))
}

pub fn write_tensor(path: &Path, dims: [u32; 3], values: &[f32]) -> Result<(), LoadError> {
    std::fs::write(path, encode_tensor(dims, values)).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: &Path) -> Result<([u32; 3], Vec<f32>), LoadError> {
    let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_tensor(&bytes).map_err(|message| LoadError::Invalid {
        path: path.to_path_buf(),
        message,
    })
}
