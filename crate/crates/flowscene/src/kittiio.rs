//! SemanticKITTI completion volumes: `.label` (u16 LE per voxel), `.invalid`
//! and other packed bitmasks (MSB-first), learning maps, KITTI calib files.
//!
//! Volumes are flat arrays in `(x, y, z)` order with z fastest, the same
//! linear index as [`GridSpec::linear_index`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use flowscene_core::lift::CameraModel;
use flowscene_core::{GridSpec, SemanticVoxelGrid};
use serde_yaml::Value;

use crate::error::{FormatError, Result};

pub const SEMANTIC_KITTI_DIMS: [usize; 3] = [256, 256, 32];

fn voxel_count(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

fn expect_size(bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() == expected {
        Ok(())
    } else {
        Err(FormatError::Size {
            got: bytes.len(),
            expected,
        })
    }
}

pub fn decode_labels(bytes: &[u8], dims: [usize; 3]) -> Result<Vec<u16>> {
    expect_size(bytes, 2 * voxel_count(dims))?;
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

pub fn encode_labels(labels: &[u16]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.to_le_bytes()).collect()
}

pub fn read_labels(path: &Path, dims: [usize; 3]) -> Result<Vec<u16>> {
    decode_labels(&fs::read(path)?, dims)
}

pub fn write_labels(labels: &[u16], path: &Path) -> Result<()> {
    fs::write(path, encode_labels(labels))?;
    Ok(())
}

/// Requires the voxel count to be a multiple of 8.
pub fn decode_bitmask(bytes: &[u8], dims: [usize; 3]) -> Result<Vec<bool>> {
    let n = voxel_count(dims);
    if n % 8 != 0 {
        return Err(FormatError::invalid(format!("{n} voxels do not pack into bytes")));
    }
    expect_size(bytes, n / 8)?;
    Ok(bytes
        .iter()
        .flat_map(|&b| (0..8).map(move |k| b & (0x80 >> k) != 0))
        .collect())
}

pub fn encode_bitmask(bits: &[bool]) -> Result<Vec<u8>> {
    if bits.len() % 8 != 0 {
        return Err(FormatError::invalid(format!("{} bits do not pack into bytes", bits.len())));
    }
    Ok(bits
        .chunks_exact(8)
        .map(|c| c.iter().enumerate().fold(0u8, |b, (k, &s)| b | (u8::from(s) << (7 - k))))
        .collect())
}

pub fn read_bitmask(path: &Path, dims: [usize; 3]) -> Result<Vec<bool>> {
    decode_bitmask(&fs::read(path)?, dims)
}

pub fn write_bitmask(bits: &[bool], path: &Path) -> Result<()> {
    fs::write(path, encode_bitmask(bits)?)?;
    Ok(())
}

/// Raw label id → contiguous class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearningMap {
    map: BTreeMap<u16, u16>,
}

impl LearningMap {
    pub fn new(map: BTreeMap<u16, u16>) -> Result<Self> {
        if map.is_empty() {
            return Err(FormatError::invalid("learning map is empty"));
        }
        Ok(Self { map })
    }

    pub fn identity(classes: u16) -> Self {
        Self {
            map: (0..classes).map(|c| (c, c)).collect(),
        }
    }

    /// Parses either a bare `raw: class` mapping or a document with a
    /// `learning_map:` section (the layout of `semantic-kitti.yaml`).
    pub fn parse(text: &str) -> Result<Self> {
        let doc: Value =
            serde_yaml::from_str(text).map_err(|e| FormatError::invalid(format!("learning map: {e}")))?;
        let root = doc
            .as_mapping()
            .ok_or_else(|| FormatError::invalid("learning map must be a mapping"))?;
        let section = match root.get("learning_map") {
            Some(v) => v
                .as_mapping()
                .ok_or_else(|| FormatError::invalid("learning_map must be a mapping"))?,
            None => root,
        };
        let id = |v: &Value, what: &str| -> Result<u16> {
            v.as_u64()
                .and_then(|n| u16::try_from(n).ok())
                .ok_or_else(|| FormatError::invalid(format!("learning map {what} {v:?} is not a u16")))
        };
        let mut map = BTreeMap::new();
        for (k, v) in section {
            map.insert(id(k, "key")?, id(v, "value")?);
        }
        Self::new(map)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, raw: u16) -> Option<u16> {
        self.map.get(&raw).copied()
    }

    /// One more than the largest class id.
    pub fn num_classes(&self) -> usize {
        self.map.values().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u16, u16)> + '_ {
        self.map.iter().map(|(&k, &v)| (k, v))
    }
}

/// Maps the raw id of every valid voxel; invalid voxels get label 0 and are
/// not looked up. Validity is carried over unchanged.
pub fn remap(
    raw: &[u16],
    valid: &[bool],
    spec: GridSpec,
    map: &LearningMap,
    num_classes: usize,
) -> Result<SemanticVoxelGrid> {
    if raw.len() != spec.num_voxels() || valid.len() != raw.len() {
        return Err(FormatError::invalid("label volume does not match the grid"));
    }
    let mut unmapped = Vec::new();
    let labels = raw
        .iter()
        .zip(valid)
        .map(|(&r, &ok)| {
            if !ok {
                return 0;
            }
            map.get(r).unwrap_or_else(|| {
                if !unmapped.contains(&r) {
                    unmapped.push(r);
                }
                0
            })
        })
        .collect();
    if !unmapped.is_empty() {
        unmapped.sort_unstable();
        return Err(FormatError::invalid(format!(
            "raw label ids {unmapped:?} missing from the learning map"
        )));
    }
    Ok(SemanticVoxelGrid::new(spec, num_classes, labels, valid.to_vec())?)
}

fn parse_row(line: &str) -> Result<(String, Vec<f64>)> {
    let (key, rest) = line
        .split_once(':')
        .ok_or_else(|| FormatError::invalid(format!("calib line without key: {line:?}")))?;
    let values = rest
        .split_ascii_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| FormatError::invalid(format!("calib {key}: bad number {t:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((key.trim().to_string(), values))
}

/// KITTI calib text: `P2` gives the intrinsics, `Tr` (ego → camera, 3×4
/// row-major) is inverted into the camera-to-ego transform.
pub fn parse_calib(text: &str) -> Result<CameraModel> {
    let mut rows = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = parse_row(line)?;
        rows.insert(k, v);
    }
    let get = |key: &str| -> Result<&Vec<f64>> {
        let v = rows
            .get(key)
            .ok_or_else(|| FormatError::invalid(format!("calib is missing {key}")))?;
        if v.len() == 12 {
            Ok(v)
        } else {
            Err(FormatError::invalid(format!("calib {key} has {} values, expected 12", v.len())))
        }
    };
    let p2 = get("P2")?;
    let tr = get("Tr")?;
    // cam = R·ego + t  ⇒  ego = Rᵀ·cam − Rᵀ·t
    let mut rotation = [[0.0f32; 3]; 3];
    let mut translation = [0.0f32; 3];
    for i in 0..3 {
        for j in 0..3 {
            rotation[i][j] = tr[j * 4 + i] as f32;
        }
        translation[i] = -(0..3).map(|j| tr[j * 4 + i] * tr[j * 4 + 3]).sum::<f64>() as f32;
    }
    Ok(CameraModel::new(
        p2[0] as f32,
        p2[5] as f32,
        p2[2] as f32,
        p2[6] as f32,
        rotation,
        translation,
    )?)
}

pub fn format_calib(cam: &CameraModel) -> String {
    let r = &cam.rotation;
    let t = &cam.translation;
    let mut tr = [0.0f64; 12];
    for i in 0..3 {
        for j in 0..3 {
            tr[i * 4 + j] = f64::from(r[j][i]);
        }
        tr[i * 4 + 3] = -(0..3).map(|j| f64::from(r[j][i]) * f64::from(t[j])).sum::<f64>();
    }
    let p2 = [
        cam.fx, 0.0, cam.cx, 0.0, 0.0, cam.fy, cam.cy, 0.0, 0.0, 0.0, 1.0, 0.0,
    ];
    let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
    format!(
        "P2: {}\nTr: {}\n",
        join(&mut p2.iter().map(|v| v.to_string())),
        join(&mut tr.iter().map(|v| v.to_string()))
    )
}

pub fn read_calib(path: &Path) -> Result<CameraModel> {
    parse_calib(&fs::read_to_string(path)?)
}

pub fn write_calib(cam: &CameraModel, path: &Path) -> Result<()> {
    fs::write(path, format_calib(cam))?;
    Ok(())
}
