//! Geometric and temporal kernels for flow-guided semantic scene completion.
//!
//! The crate is `no_std` (it only needs `alloc`). Enable the `rayon` feature to
//! parallelise the per-pixel kernels; results are identical either way.
//!
//! Data flow of a full run:
//!
//! ```text
//! features + flows --warp/consistency--> F_warp, M
//!                  --fgta--> F_agg, F_t'
//!                  --lift + voxel_pool--> V_t, V_agg, V_mask
//!                  --ogvr--> V_fine --readout--> labels --metrics--> IoU / mIoU
//! ```
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

mod error;
mod par;

pub mod fgta;
pub mod flow;
pub mod grids;
pub mod lift;
pub mod losses;
pub mod metrics;
pub mod ogvr;
pub mod pipeline;
pub mod synthsim;

pub use error::{Error, Result};
pub use grids::{FeatureMap, FlowField, GridSpec, OcclusionMask, SemanticVoxelGrid, VoxelGrid};
