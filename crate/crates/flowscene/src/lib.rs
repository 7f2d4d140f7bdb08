//! File formats, SemanticKITTI I/O and the `flowscene` command line, on top
//! of [`flowscene_core`].
//!
//! | module      | format                                           |
//! |-------------|--------------------------------------------------|
//! | [`fsgr`]    | FSGR tensor container (features, flows, depth, voxels) |
//! | [`flo`]     | Middlebury `.flo` optical flow                   |
//! | [`pgm`]     | binary PGM images and 0/255 occlusion masks      |
//! | [`ply`]     | ASCII PLY voxel-cube meshes                      |
//! | [`kittiio`] | `.label`, `.invalid`, learning maps, calib text  |

pub mod attention;
pub mod cli;
mod error;
pub mod flo;
pub mod fsgr;
pub mod json;
pub mod kittiio;
pub mod pgm;
pub mod ply;
pub mod report;
pub mod scene;

pub use error::{FormatError, Result};
