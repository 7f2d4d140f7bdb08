//! Middlebury `.flo`: `f32 202021.25 | i32 width | i32 height | (dx, dy) * W*H`,
//! little-endian, row-major.

use std::fs;
use std::path::Path;

use flowscene_core::FlowField;

use crate::error::{FormatError, Result};

pub const MAGIC: f32 = 202021.25;

pub fn encode(flow: &FlowField) -> Vec<u8> {
    let (dx, dy) = (flow.dx(), flow.dy());
    let mut out = Vec::with_capacity(12 + 8 * dx.len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (a, b) in dx.iter().zip(dy) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(FormatError::Truncated {
            needed: 12,
            have: bytes.len(),
        });
    }
    let word = |i: usize| -> [u8; 4] { bytes[4 * i..4 * i + 4].try_into().unwrap() };
    let magic = f32::from_le_bytes(word(0));
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC.to_string(),
            found: magic.to_string(),
        });
    }
    let (w, h) = (i32::from_le_bytes(word(1)), i32::from_le_bytes(word(2)));
    if w <= 0 || h <= 0 {
        return Err(FormatError::invalid(format!("flow dimensions {w}x{h}")));
    }
    let n = w as usize * h as usize;
    let needed = 12 + 8 * n;
    if bytes.len() < needed {
        return Err(FormatError::Truncated {
            needed,
            have: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(FormatError::Size {
            got: bytes.len(),
            expected: needed,
        });
    }
    let (mut dx, mut dy) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for p in 0..n {
        dx.push(f32::from_le_bytes(word(3 + 2 * p)));
        dy.push(f32::from_le_bytes(word(4 + 2 * p)));
    }
    Ok(FlowField::new(h as usize, w as usize, dx, dy)?)
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    decode(&fs::read(path)?)
}

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    fs::write(path, encode(flow))?;
    Ok(())
}
