//! FSGR tensor container.
//!
//! ```text
//! "FSGR" | u32 rank | u32 dims[rank] | u8 dtype (0 = f32) | f32 data[prod(dims)]
//! ```
//! All integers and floats little-endian; data in row-major order.

use std::fs;
use std::path::Path;

use flowscene_core::lift::DepthDistribution;
use flowscene_core::{FeatureMap, FlowField, GridSpec, SemanticVoxelGrid, VoxelGrid};

use crate::error::{FormatError, Result};

pub const MAGIC: &[u8; 4] = b"FSGR";
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        match n {
            Some(n) if n == data.len() => Ok(Self { dims, data }),
            _ => Err(FormatError::invalid(format!(
                "tensor dims {dims:?} do not hold {} values",
                data.len()
            ))),
        }
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.dims.len() == rank {
            Ok(())
        } else {
            Err(FormatError::invalid(format!(
                "{what} needs a rank-{rank} tensor, got dims {:?}",
                self.dims
            )))
        }
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(DTYPE_F32);
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(FormatError::Truncated {
        needed: at.saturating_add(n),
        have: bytes.len(),
    })?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn u32_at(bytes: &[u8], at: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, at, 4)?.try_into().unwrap()))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut at = 0;
    let magic = take(bytes, &mut at, 4)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: "FSGR".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let rank = u32_at(bytes, &mut at)? as usize;
    let mut dims = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        dims.push(u32_at(bytes, &mut at)? as usize);
    }
    let dtype = take(bytes, &mut at, 1)?[0];
    if dtype != DTYPE_F32 {
        return Err(FormatError::invalid(format!("unsupported dtype tag {dtype}")));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::invalid(format!("tensor dims {dims:?} overflow")))?;
    let payload = take(bytes, &mut at, count)?;
    if at != bytes.len() {
        return Err(FormatError::invalid(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - at
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn read(path: &Path) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

pub fn write(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

/// `[C, H, W]`.
pub fn from_feature_map(f: &FeatureMap) -> Tensor {
    Tensor {
        dims: vec![f.channels(), f.height(), f.width()],
        data: f.data().to_vec(),
    }
}

pub fn to_feature_map(t: Tensor) -> Result<FeatureMap> {
    t.expect_rank(3, "feature map")?;
    Ok(FeatureMap::new(t.dims[0], t.dims[1], t.dims[2], t.data)?)
}

/// `[2, H, W]`, dx plane then dy plane.
pub fn from_flow(f: &FlowField) -> Tensor {
    Tensor {
        dims: vec![2, f.height(), f.width()],
        data: f.data().to_vec(),
    }
}

pub fn to_flow(t: Tensor) -> Result<FlowField> {
    t.expect_rank(3, "flow field")?;
    if t.dims[0] != 2 {
        return Err(FormatError::invalid("flow tensor needs 2 channels"));
    }
    let (h, w) = (t.dims[1], t.dims[2]);
    let mut data = t.data;
    let dy = data.split_off(h * w);
    Ok(FlowField::new(h, w, data, dy)?)
}

/// `[D, H, W]` weights and the `[D + 1]` bin edges as a second tensor.
pub fn from_depth(d: &DepthDistribution) -> (Tensor, Tensor) {
    (
        Tensor {
            dims: vec![d.bins(), d.height(), d.width()],
            data: d.data().to_vec(),
        },
        Tensor {
            dims: vec![d.edges().len()],
            data: d.edges().to_vec(),
        },
    )
}

pub fn to_depth(weights: Tensor, edges: Tensor) -> Result<DepthDistribution> {
    weights.expect_rank(3, "depth distribution")?;
    edges.expect_rank(1, "depth bin edges")?;
    if edges.dims[0] != weights.dims[0] + 1 {
        return Err(FormatError::invalid(format!(
            "{} bin edges for {} bins",
            edges.dims[0], weights.dims[0]
        )));
    }
    Ok(DepthDistribution::new(weights.dims[1], weights.dims[2], edges.data, weights.data)?)
}

/// `[C, X, Y, Z]`.
pub fn from_voxels(v: &VoxelGrid) -> Tensor {
    let [x, y, z] = v.dims();
    Tensor {
        dims: vec![v.channels(), x, y, z],
        data: v.data().to_vec(),
    }
}

/// Accepts `[C, X, Y, Z]` or `[X, Y, Z]` (one channel); dims must match `spec`.
pub fn to_voxels(t: Tensor, spec: GridSpec) -> Result<VoxelGrid> {
    let (c, dims) = match t.dims.len() {
        3 => (1, &t.dims[..]),
        4 => (t.dims[0], &t.dims[1..]),
        _ => return Err(FormatError::invalid(format!("voxel tensor dims {:?}", t.dims))),
    };
    if dims != spec.dims {
        return Err(FormatError::invalid(format!(
            "voxel tensor dims {dims:?} vs grid {:?}",
            spec.dims
        )));
    }
    Ok(VoxelGrid::new(c, spec, t.data)?)
}

/// Labels as `[X, Y, Z]` floats.
pub fn from_labels(g: &SemanticVoxelGrid) -> Tensor {
    Tensor {
        dims: g.dims().to_vec(),
        data: g.labels().iter().map(|&l| f32::from(l)).collect(),
    }
}

/// Every value must be a non-negative integer below 65536.
pub fn to_label_values(t: &Tensor) -> Result<Vec<u16>> {
    t.data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v <= f32::from(u16::MAX) && v.fract() == 0.0 {
                Ok(v as u16)
            } else {
                Err(FormatError::invalid(format!("label value {v} is not a class id")))
            }
        })
        .collect()
}
