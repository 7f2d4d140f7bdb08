//! End-to-end orchestration: warp/occlusion → FGTA → lift → OGVR → readout.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fgta::{fgta_forward_with, AttentionParams, FlowPair, DEFAULT_HEADS, DEFAULT_WINDOW};
use crate::flow::ConsistencyConfig;
use crate::grids::{FeatureMap, GridSpec, OcclusionMask, SemanticVoxelGrid, VoxelGrid};
use crate::lift::{
    frustum_points, uniform_bin_edges, CameraModel, DepthDistribution, PoolingPlan, DEFAULT_DEPTH_BINS,
    DEFAULT_DEPTH_RANGE,
};
use crate::losses::LossWeights;
use crate::ogvr::refine;

/// Where the attention projections come from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum AttentionSource {
    /// Identity query/key/value projections; the output projection is
    /// `gain · I`.
    Identity { heads: usize, window: usize, gain: f32 },
    Seeded { heads: usize, window: usize, seed: u64 },
    Explicit { params: AttentionParams },
}

impl Default for AttentionSource {
    fn default() -> Self {
        Self::Identity {
            heads: DEFAULT_HEADS,
            window: DEFAULT_WINDOW,
            gain: 1.0,
        }
    }
}

impl AttentionSource {
    pub fn resolve(&self, channels: usize) -> Result<AttentionParams> {
        match self {
            Self::Identity { heads, window, gain } => {
                let mut p = AttentionParams::identity(channels, *heads, *window)?;
                p.output.iter_mut().for_each(|v| *v *= gain);
                p.validate()?;
                Ok(p)
            }
            Self::Seeded { heads, window, seed } => AttentionParams::seeded(channels, *heads, *window, *seed),
            Self::Explicit { params } => {
                if params.channels != channels {
                    return Err(Error::shape(format!(
                        "attention params for {} channels, features have {channels}",
                        params.channels
                    )));
                }
                params.validate()?;
                Ok(params.clone())
            }
        }
    }
}

/// Uniform depth binning.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DepthBins {
    pub bins: usize,
    pub near: f32,
    pub far: f32,
}

impl Default for DepthBins {
    fn default() -> Self {
        Self {
            bins: DEFAULT_DEPTH_BINS,
            near: DEFAULT_DEPTH_RANGE.0,
            far: DEFAULT_DEPTH_RANGE.1,
        }
    }
}

impl DepthBins {
    pub fn edges(&self) -> Result<Vec<f32>> {
        uniform_bin_edges(self.bins, self.near, self.far)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PipelineConfig {
    /// Number of history frames used.
    pub history: usize,
    pub consistency: ConsistencyConfig,
    pub attention: AttentionSource,
    pub depth: DepthBins,
    pub grid: GridSpec,
    pub loss_weights: LossWeights,
    /// Per-class readout vectors; class 0 first.
    pub prototypes: Option<Vec<Vec<f32>>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            history: 2,
            consistency: ConsistencyConfig::default(),
            attention: AttentionSource::default(),
            depth: DepthBins::default(),
            grid: GridSpec::semantic_kitti(),
            loss_weights: LossWeights::default(),
            prototypes: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::InvalidConfig("history must be at least 1".into()));
        }
        let wrap = |e: Error| Error::InvalidConfig(format!("{e}"));
        self.consistency.validate().map_err(wrap)?;
        self.depth.edges().map_err(wrap)?;
        self.grid.validate().map_err(wrap)?;
        self.loss_weights.validate().map_err(wrap)?;
        if let Some(p) = &self.prototypes {
            let c = p.first().map_or(0, Vec::len);
            if p.len() < 2 || c == 0 || p.iter().any(|v| v.len() != c) {
                return Err(Error::InvalidConfig(
                    "prototypes must be at least two equal-length non-empty vectors".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Everything a run consumes besides the config.
#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub current: &'a FeatureMap,
    /// Frames `t-1, t-2, …`; at least `cfg.history` of them.
    pub history: &'a [FeatureMap],
    pub flows: &'a [FlowPair],
    pub depth: &'a DepthDistribution,
    pub camera: &'a CameraModel,
    /// Replaces the consistency-check mask when given.
    pub mask_override: Option<&'a OcclusionMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub v_fine: VoxelGrid,
    pub mask: OcclusionMask,
    pub aggregated: FeatureMap,
    pub refined: FeatureMap,
    pub v_t: VoxelGrid,
    pub v_agg: VoxelGrid,
    pub v_mask: VoxelGrid,
}

fn check_depth(depth: &DepthDistribution, cfg: &PipelineConfig) -> Result<()> {
    let want = cfg.depth.edges()?;
    let same = want.len() == depth.edges().len()
        && want.iter().zip(depth.edges()).all(|(a, b)| (a - b).abs() <= 1e-4 * a.abs().max(1.0));
    if same {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "depth distribution has {} bins over [{}, {}], config expects {} over [{}, {}]",
            depth.bins(),
            depth.edges()[0],
            depth.edges()[depth.bins()],
            cfg.depth.bins,
            cfg.depth.near,
            cfg.depth.far
        )))
    }
}

fn pooling_plan(inputs: &PipelineInputs<'_>, cfg: &PipelineConfig) -> Result<PoolingPlan> {
    check_depth(inputs.depth, cfg)?;
    let (h, w) = (inputs.current.height(), inputs.current.width());
    let points = frustum_points(inputs.camera, h, w, inputs.depth.edges())?;
    PoolingPlan::new(&points, &cfg.grid)
}

pub fn run(inputs: &PipelineInputs<'_>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let n = cfg.history;
    if inputs.history.len() < n || inputs.flows.len() < n {
        return Err(Error::InvalidConfig(format!(
            "history of {n} frames configured, {} frames and {} flow pairs given",
            inputs.history.len(),
            inputs.flows.len()
        )));
    }
    let params = cfg
        .attention
        .resolve(inputs.current.channels())
        .map_err(|e| e.in_stage("attention"))?;
    let fgta = fgta_forward_with(
        inputs.current,
        &inputs.history[..n],
        &inputs.flows[..n],
        &cfg.consistency,
        &params,
        inputs.mask_override,
    )
    .map_err(|e| e.in_stage("fgta"))?;

    let lifted = || -> Result<_> {
        let plan = pooling_plan(inputs, cfg)?;
        Ok((
            plan.lift_pool(&fgta.refined, inputs.depth)?,
            plan.lift_pool(&fgta.aggregated, inputs.depth)?,
            plan.lift_mask(&fgta.mask, inputs.depth)?,
        ))
    };
    let (v_t, v_agg, v_mask) = lifted().map_err(|e| e.in_stage("lift"))?;
    let v_fine = refine(&v_t, &v_agg, &v_mask).map_err(|e| e.in_stage("ogvr"))?;
    Ok(PipelineOutput {
        v_fine,
        mask: fgta.mask,
        aggregated: fgta.aggregated,
        refined: fgta.refined,
        v_t,
        v_agg,
        v_mask,
    })
}

/// Lift-splat of the current features alone, without temporal aggregation or
/// refinement.
pub fn run_single_frame(inputs: &PipelineInputs<'_>, cfg: &PipelineConfig) -> Result<VoxelGrid> {
    cfg.validate()?;
    pooling_plan(inputs, cfg)
        .and_then(|plan| plan.lift_pool(inputs.current, inputs.depth))
        .map_err(|e| e.in_stage("lift"))
}

/// Per-voxel argmax of `dot(v, prototype_c)`. Voxels whose best score is not
/// positive — including all-zero voxels — read out as class 0 unless class 0
/// itself scores higher; ties go to the lower class.
pub fn readout(v_fine: &VoxelGrid, prototypes: &[Vec<f32>]) -> Result<SemanticVoxelGrid> {
    let k = prototypes.len();
    if k < 2 || k > u16::MAX as usize {
        return Err(Error::param(format!("{k} prototypes")));
    }
    let c = v_fine.channels();
    if let Some(p) = prototypes.iter().find(|p| p.len() != c) {
        return Err(Error::shape(format!(
            "prototype of length {} for {c}-channel voxels",
            p.len()
        )));
    }
    let n = v_fine.spec().num_voxels();
    let data = v_fine.data();
    let mut scores = alloc::vec![0.0f64; k];
    let labels = (0..n)
        .map(|i| {
            if (0..c).all(|ch| data[ch * n + i] == 0.0) {
                return 0;
            }
            for (s, p) in scores.iter_mut().zip(prototypes) {
                *s = (0..c).map(|ch| f64::from(data[ch * n + i]) * f64::from(p[ch])).sum();
            }
            let mut best = 0;
            for cls in 1..k {
                if scores[cls] > scores[best] {
                    best = cls;
                }
            }
            best as u16
        })
        .collect();
    SemanticVoxelGrid::fully_valid(*v_fine.spec(), k, labels)
}
