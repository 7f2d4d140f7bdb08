//! Attention projections stored as an FSGR tensor `[4, C, C]` (query, key,
//! value, output) next to a JSON manifest with the head count, window and
//! scale.

use std::path::{Path, PathBuf};

use flowscene_core::fgta::AttentionParams;
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};
use crate::fsgr::{self, Tensor};
use crate::json::{read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub heads: usize,
    pub window: usize,
    pub scale: f32,
}

/// `weights.fsgr` → `weights.json`.
pub fn manifest_path(tensor: &Path) -> PathBuf {
    tensor.with_extension("json")
}

pub fn write_attention(p: &AttentionParams, tensor: &Path) -> Result<()> {
    p.validate()?;
    let c = p.channels;
    let mut data = Vec::with_capacity(4 * c * c);
    for m in [&p.query, &p.key, &p.value, &p.output] {
        data.extend_from_slice(m);
    }
    fsgr::write(&Tensor::new(vec![4, c, c], data)?, tensor)?;
    let manifest = Manifest {
        heads: p.heads,
        window: p.window,
        scale: p.scale,
    };
    write_json(&manifest, &manifest_path(tensor))
}

pub fn read_attention(tensor: &Path) -> Result<AttentionParams> {
    let t = fsgr::read(tensor)?;
    let manifest: Manifest = read_json(&manifest_path(tensor))?;
    if t.dims.len() != 3 || t.dims[0] != 4 || t.dims[1] != t.dims[2] {
        return Err(FormatError::invalid(format!(
            "attention tensor must be [4, C, C], got {:?}",
            t.dims
        )));
    }
    let c = t.dims[1];
    let mut mats = t.data.chunks_exact(c * c).map(<[f32]>::to_vec);
    let p = AttentionParams {
        channels: c,
        heads: manifest.heads,
        window: manifest.window,
        scale: manifest.scale,
        query: mats.next().unwrap(),
        key: mats.next().unwrap(),
        value: mats.next().unwrap(),
        output: mats.next().unwrap(),
    };
    p.validate()?;
    Ok(p)
}
