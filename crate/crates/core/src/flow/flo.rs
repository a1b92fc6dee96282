//! Middlebury `.flo` files: little-endian `f32` magic 202021.25, `i32` width,
//! `i32` height, then `height * width` interleaved `(u, v)` `f32` pairs.

use std::path::Path;

use super::Flow;
use crate::error::FlowError;
use crate::grid::Grid;
use crate::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w) = flow.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + h * w * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for v in flow.vectors().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, FlowError> {
    if bytes.len() < HEADER_LEN {
        return Err(FlowError::Truncated(format!("{} byte header", bytes.len())));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(FlowError::BadMagic(magic));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w < 0 || h < 0 {
        return Err(FlowError::Truncated(format!("negative dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| FlowError::Truncated("dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(FlowError::Truncated(format!(
            "expected {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data = payload[..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Flow::from_grid(Grid::from_vec(h, w, 2, data)))
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<(), FlowError> {
    std::fs::write(path.as_ref(), encode_flo(flow))
        .map_err(|e| FlowError::Io(format!("{}: {e}", path.as_ref().display())))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField, FlowError> {
    let bytes = std::fs::read(path.as_ref())
        .map_err(|e| FlowError::Io(format!("{}: {e}", path.as_ref().display())))?;
    decode_flo(&bytes)
}
