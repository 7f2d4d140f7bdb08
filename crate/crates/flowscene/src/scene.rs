//! On-disk scene directories, as written by `flowscene synth` and read by
//! `flowscene run --scene`.
//!
//! ```text
//! scene.json            generator config (with the seed used)
//! calib.json calib.txt  camera model (JSON sidecar and KITTI-style text)
//! grid.json             voxel grid spec
//! pipeline.json         pipeline config matching the scene
//! frame_{k}.fsgr        features of frame t-k (k = 0 is the current frame)
//! flow_fwd_{k}.flo      Flow^{t→t-k}, on frame t
//! flow_bwd_{k}.flo      Flow^{t-k→t}, on frame t-k
//! occlusion_{k}.pgm     oracle occlusion of frame t against t-k
//! depth.fsgr            [D, H, W] depth distribution of frame t
//! depth_edges.fsgr      [D + 1] bin edges
//! gt.label gt.invalid   ground-truth voxel labels and invalid bitmask
//! prototypes.fsgr       [K, C] class readout vectors
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use flowscene_core::fgta::FlowPair;
use flowscene_core::lift::{CameraModel, DepthDistribution};
use flowscene_core::pipeline::{AttentionSource, DepthBins, PipelineConfig};
use flowscene_core::synthsim::SyntheticScene;
use flowscene_core::{FeatureMap, GridSpec, SemanticVoxelGrid};
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};
use crate::flo::{read_flo, write_flo};
use crate::fsgr::{self, Tensor};
use crate::json::{read_json, write_json};
use crate::kittiio;
use crate::pgm::write_mask;

pub const SCENE_JSON: &str = "scene.json";
pub const CALIB_JSON: &str = "calib.json";
pub const CALIB_TXT: &str = "calib.txt";
pub const GRID_JSON: &str = "grid.json";
pub const PIPELINE_JSON: &str = "pipeline.json";
pub const DEPTH: &str = "depth.fsgr";
pub const DEPTH_EDGES: &str = "depth_edges.fsgr";
pub const GT_LABEL: &str = "gt.label";
pub const GT_INVALID: &str = "gt.invalid";
pub const PROTOTYPES: &str = "prototypes.fsgr";

pub fn frame_file(k: usize) -> String {
    format!("frame_{k}.fsgr")
}

pub fn flow_files(k: usize) -> (String, String) {
    (format!("flow_fwd_{k}.flo"), format!("flow_bwd_{k}.flo"))
}

pub fn occlusion_file(k: usize) -> String {
    format!("occlusion_{k}.pgm")
}

/// Pipeline config file: the core config plus an optional path (relative to
/// the file) of stored attention projections, which takes precedence over
/// `attention`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_file: Option<PathBuf>,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        if let (Some(f), Some(dir)) = (&cfg.attention_file, path.parent()) {
            cfg.attention_file = Some(dir.join(f));
        }
        Ok(cfg)
    }

    /// Inlines the attention file, if any.
    pub fn resolve(mut self) -> Result<PipelineConfig> {
        if let Some(f) = self.attention_file.take() {
            self.pipeline.attention = AttentionSource::Explicit {
                params: crate::attention::read_attention(&f)?,
            };
        }
        Ok(self.pipeline)
    }
}

fn largest_head_count(channels: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|h| channels % h == 0).unwrap_or(1)
}

/// The pipeline config `synth` writes next to a scene: identity attention
/// projections with output gain 0.5, the scene's grid and depth bins, and
/// prototypes taken from `prototypes.fsgr`.
pub fn scene_pipeline_config(scene: &SyntheticScene) -> PipelineConfig {
    let c = &scene.config;
    PipelineConfig {
        history: c.frames - 1,
        attention: AttentionSource::Identity {
            heads: largest_head_count(c.channels),
            window: flowscene_core::fgta::DEFAULT_WINDOW,
            gain: 0.5,
        },
        depth: DepthBins {
            bins: c.depth_bins,
            near: c.depth_range.0,
            far: c.depth_range.1,
        },
        grid: c.grid,
        ..PipelineConfig::default()
    }
}

pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut cfg = scene.config.clone();
    cfg.seed = Some(scene.seed);
    write_json(&cfg, &dir.join(SCENE_JSON))?;
    write_json(&scene.camera, &dir.join(CALIB_JSON))?;
    kittiio::write_calib(&scene.camera, &dir.join(CALIB_TXT))?;
    write_json(&cfg.grid, &dir.join(GRID_JSON))?;
    write_json(
        &RunConfig {
            pipeline: scene_pipeline_config(scene),
            attention_file: None,
        },
        &dir.join(PIPELINE_JSON),
    )?;

    let t = scene.current();
    for k in 0..=t {
        fsgr::write(&fsgr::from_feature_map(&scene.features[t - k]), &dir.join(frame_file(k)))?;
    }
    for k in 1..=t {
        let (fwd, bwd) = scene.oracle_flow(t, t - k)?;
        let (f, b) = flow_files(k);
        write_flo(&fwd, &dir.join(f))?;
        write_flo(&bwd, &dir.join(b))?;
        write_mask(&scene.oracle_occlusion(t, t - k)?, &dir.join(occlusion_file(k)))?;
    }

    let (gt, depth) = scene.oracle_voxels()?;
    let (w, e) = fsgr::from_depth(&depth);
    fsgr::write(&w, &dir.join(DEPTH))?;
    fsgr::write(&e, &dir.join(DEPTH_EDGES))?;
    kittiio::write_labels(gt.labels(), &dir.join(GT_LABEL))?;
    let invalid: Vec<bool> = gt.valid().iter().map(|v| !v).collect();
    kittiio::write_bitmask(&invalid, &dir.join(GT_INVALID))?;
    write_prototypes(scene.prototypes(), &dir.join(PROTOTYPES))
}

pub fn write_prototypes(protos: &[Vec<f32>], path: &Path) -> Result<()> {
    let c = protos.first().map_or(0, Vec::len);
    let data = protos.iter().flatten().copied().collect();
    fsgr::write(&Tensor::new(vec![protos.len(), c], data)?, path)
}

pub fn read_prototypes(path: &Path) -> Result<Vec<Vec<f32>>> {
    let t = fsgr::read(path)?;
    if t.dims.len() != 2 || t.dims[1] == 0 {
        return Err(FormatError::invalid(format!("prototypes must be [K, C], got {:?}", t.dims)));
    }
    Ok(t.data.chunks_exact(t.dims[1]).map(<[f32]>::to_vec).collect())
}

/// Reads a camera from `.json` (CameraModel) or KITTI calib text.
pub fn read_camera(path: &Path) -> Result<CameraModel> {
    if path.extension().is_some_and(|e| e == "json") {
        let cam: CameraModel = read_json(path)?;
        cam.validate()?;
        Ok(cam)
    } else {
        kittiio::read_calib(path)
    }
}

pub fn read_depth(weights: &Path, edges: &Path) -> Result<DepthDistribution> {
    fsgr::to_depth(fsgr::read(weights)?, fsgr::read(edges)?)
}

pub fn read_grid(path: &Path) -> Result<GridSpec> {
    let g: GridSpec = read_json(path)?;
    g.validate()?;
    Ok(g)
}

/// Everything `run` needs from a scene directory.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub current: FeatureMap,
    pub history: Vec<FeatureMap>,
    pub flows: Vec<FlowPair>,
    pub depth: DepthDistribution,
    pub camera: CameraModel,
    pub grid: Option<GridSpec>,
    pub prototypes: Option<Vec<Vec<f32>>>,
    pub config: Option<RunConfig>,
}

/// Loads the current frame and every history frame that has a flow pair.
pub fn load_scene(dir: &Path) -> Result<SceneInputs> {
    let current = fsgr::to_feature_map(fsgr::read(&dir.join(frame_file(0)))?)?;
    let (mut history, mut flows) = (Vec::new(), Vec::new());
    for k in 1.. {
        let frame = dir.join(frame_file(k));
        if !frame.exists() {
            break;
        }
        let (f, b) = flow_files(k);
        history.push(fsgr::to_feature_map(fsgr::read(&frame)?)?);
        flows.push(FlowPair {
            fwd: read_flo(&dir.join(f))?,
            bwd: read_flo(&dir.join(b))?,
        });
    }
    let optional = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
    let camera = match optional(CALIB_JSON) {
        Some(p) => read_camera(&p)?,
        None => kittiio::read_calib(&dir.join(CALIB_TXT))?,
    };
    Ok(SceneInputs {
        current,
        history,
        flows,
        depth: read_depth(&dir.join(DEPTH), &dir.join(DEPTH_EDGES))?,
        camera,
        grid: optional(GRID_JSON).map(|p| read_grid(&p)).transpose()?,
        prototypes: optional(PROTOTYPES).map(|p| read_prototypes(&p)).transpose()?,
        config: optional(PIPELINE_JSON).map(|p| RunConfig::read(&p)).transpose()?,
    })
}

/// Ground-truth labels of a scene directory (all voxels valid unless
/// `gt.invalid` says otherwise).
pub fn load_ground_truth(dir: &Path, spec: GridSpec, classes: usize) -> Result<SemanticVoxelGrid> {
    let labels = kittiio::read_labels(&dir.join(GT_LABEL), spec.dims)?;
    let invalid = kittiio::read_bitmask(&dir.join(GT_INVALID), spec.dims)?;
    Ok(SemanticVoxelGrid::new(spec, classes, labels, invalid.iter().map(|b| !b).collect())?)
}
