//! Occlusion-guided voxel refinement.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grids::VoxelGrid;

/// Smallest normaliser allowed when dividing by the accumulated weight.
pub const MIN_WEIGHT: f32 = 1e-6;

/// Mask values this far outside `[0, 1]` are treated as rounding noise and
/// clamped; anything further is rejected.
pub const MASK_SLACK: f32 = 1e-5;

/// `V_fine = ((1 - m)·V_agg + V_t) / ((1 - m) + 1)`, mask broadcast over
/// channels. Where the mask says occluded (`m = 1`) the current-frame volume
/// is returned unchanged; where it is clear the two volumes are averaged.
pub fn refine(v_t: &VoxelGrid, v_agg: &VoxelGrid, v_mask: &VoxelGrid) -> Result<VoxelGrid> {
    if !v_t.same_layout(v_agg) {
        return Err(Error::shape(format!(
            "V_t {}x{:?} vs V_agg {}x{:?}",
            v_t.channels(),
            v_t.dims(),
            v_agg.channels(),
            v_agg.dims()
        )));
    }
    if v_mask.channels() != 1 || v_mask.dims() != v_t.dims() {
        return Err(Error::shape("V_mask must be one channel with the same dims as V_t"));
    }
    if let Some(m) = v_mask
        .data()
        .iter()
        .find(|&&m| !(-MASK_SLACK..=1.0 + MASK_SLACK).contains(&m))
    {
        return Err(Error::param(format!("mask value {m} outside [0, 1]")));
    }

    let n = v_t.spec().num_voxels();
    let mask = v_mask.data();
    let mut out = Vec::with_capacity(v_t.data().len());
    for c in 0..v_t.channels() {
        let (t, agg) = (v_t.channel(c), v_agg.channel(c));
        for i in 0..n {
            let clear = 1.0 - mask[i].clamp(0.0, 1.0);
            let mut fine = agg[i] * clear;
            fine += t[i];
            let weight = (clear + 1.0).max(MIN_WEIGHT);
            out.push(fine / weight);
        }
    }
    VoxelGrid::new(v_t.channels(), *v_t.spec(), out)
}
