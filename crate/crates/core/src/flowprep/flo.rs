//! Middlebury `.flo` flow files.
//!
//! Layout (little-endian): `f32` magic 202021.25 (ASCII "PIEH"), `i32` width,
//! `i32` height, then `height * width` interleaved `(u, v)` `f32` pairs, row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::flow::FlowField;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

pub fn write_flo(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !field.is_finite() {
        return Err(Error::Data("refusing to write non-finite flow".into()));
    }
    let (h, w) = field.dims();
    let mut buf = Vec::with_capacity(12 + h * w * 8);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in field.u.iter().zip(field.v.iter()) {
        buf.extend_from_slice(&u.to_le_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_flo(&bytes)
}

fn parse_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!(".flo header truncated ({} bytes)", bytes.len())));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!("bad .flo magic {magic}, expected {FLO_MAGIC}")));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w < 0 || h < 0 {
        return Err(Error::Format(format!("negative .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + w * h * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            ".flo payload is {} bytes, expected {expected} for {w}x{h}",
            bytes.len()
        )));
    }
    let mut u = Array2::zeros((h, w));
    let mut v = Array2::zeros((h, w));
    for (i, (pu, pv)) in u.iter_mut().zip(v.iter_mut()).enumerate() {
        let off = 12 + i * 8;
        *pu = f32::from_le_bytes(word(off));
        *pv = f32::from_le_bytes(word(off + 4));
    }
    FlowField::new(u, v)
}
