//! Deterministic synthetic scenes with exact ground truth.
//!
//! A static pinhole camera looks at fronto-parallel rectangles that translate
//! at a constant pixel velocity, optionally in front of a static background
//! wall. Every frame is rendered with a z-buffer, so flow, occlusion, depth and
//! voxel labels are known exactly. The last frame is the current frame.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::fgta::FlowPair;
use crate::grids::{FeatureMap, FlowField, GridSpec, OcclusionMask, SemanticVoxelGrid};
use crate::lift::{bin_centers, uniform_bin_edges, CameraModel, DepthDistribution};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Intrinsics {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
}

/// A wall covering the whole image at a fixed depth.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Background {
    pub class: u16,
    pub depth: f32,
}

/// A rectangle `[x, x + w) × [y, y + h)` in pixels at frame 0, moving by
/// `(vx, vy)` pixels per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectSpec {
    pub class: u16,
    pub depth: f32,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub vx: f32,
    pub vy: f32,
}

impl ObjectSpec {
    fn contains(&self, frame: f32, x: f32, y: f32) -> bool {
        let x0 = self.x + self.vx * frame;
        let y0 = self.y + self.vy * frame;
        x >= x0 && x < x0 + self.w && y >= y0 && y < y0 + self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub camera: Intrinsics,
    pub grid: GridSpec,
    pub num_classes: usize,
    pub channels: usize,
    pub noise: f32,
    pub depth_bins: usize,
    pub depth_range: (f32, f32),
    pub background: Option<Background>,
    pub objects: Vec<ObjectSpec>,
    /// Optional seed recorded in the config file.
    pub seed: Option<u64>,
}

impl Default for SceneConfig {
    /// Three frames, four moving rectangles in front of a wall. All depths sit
    /// on depth-bin centres.
    fn default() -> Self {
        let obj = |class, depth, x, y, w, h, vx, vy| ObjectSpec {
            class,
            depth,
            x,
            y,
            w,
            h,
            vx,
            vy,
        };
        Self {
            width: 64,
            height: 48,
            frames: 3,
            camera: Intrinsics {
                fx: 48.0,
                fy: 48.0,
                cx: 31.5,
                cy: 23.5,
            },
            grid: GridSpec {
                dims: [128, 128, 32],
                voxel_size: 0.4,
                origin: [0.0, -25.6, -6.4],
            },
            num_classes: 6,
            channels: 16,
            noise: 0.01,
            depth_bins: 48,
            depth_range: (2.0, 50.0),
            background: Some(Background {
                class: 5,
                depth: 40.5,
            }),
            objects: vec![
                obj(1, 12.5, 4.0, 14.0, 16.0, 14.0, 3.0, 0.0),
                obj(2, 20.5, 40.0, 8.0, 14.0, 20.0, -2.0, 1.0),
                obj(3, 28.5, 22.0, 28.0, 20.0, 12.0, 1.0, -1.0),
                obj(4, 8.5, 50.0, 34.0, 10.0, 10.0, -3.0, 0.0),
            ],
            seed: None,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        if self.frames < 2 {
            return bad("at least two frames are required");
        }
        if self.objects.is_empty() {
            return bad("at least one object is required");
        }
        if self.num_classes < 2 || self.num_classes > u16::MAX as usize {
            return bad("num_classes must be in 2..=65535");
        }
        if self.channels == 0 {
            return bad("channels must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and non-negative");
        }
        self.grid
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("grid: {e}")))?;
        self.camera_model()
            .map_err(|e| Error::InvalidConfig(format!("camera: {e}")))?;
        self.bin_edges()
            .map_err(|e| Error::InvalidConfig(format!("depth bins: {e}")))?;
        let class_ok = |c: u16| c >= 1 && (c as usize) < self.num_classes;
        if let Some(bg) = &self.background {
            if !class_ok(bg.class) || !(bg.depth > 0.0 && bg.depth.is_finite()) {
                return bad("background needs a class in 1..K-1 and a positive depth");
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !class_ok(o.class) {
                return Err(Error::InvalidConfig(format!(
                    "object {i}: class {} not in 1..{}",
                    o.class,
                    self.num_classes - 1
                )));
            }
            if !(o.depth > 0.0 && o.depth.is_finite()) {
                return Err(Error::InvalidConfig(format!("object {i}: depth must be positive")));
            }
            let finite = [o.x, o.y, o.w, o.h, o.vx, o.vy].iter().all(|v| v.is_finite());
            if !finite || o.w <= 0.0 || o.h <= 0.0 {
                return Err(Error::InvalidConfig(format!("object {i}: bad rectangle")));
            }
        }
        Ok(())
    }

    pub fn camera_model(&self) -> Result<CameraModel> {
        let c = self.camera;
        CameraModel::forward_facing(c.fx, c.fy, c.cx, c.cy)
    }

    pub fn bin_edges(&self) -> Result<Vec<f32>> {
        uniform_bin_edges(self.depth_bins, self.depth_range.0, self.depth_range.1)
    }
}

/// Random translating/crossing rectangles on a 48×32 image: integer
/// rectangles, even velocities (so any two surfaces differ in motion by 0 or
/// at least 2 px per frame), depths on bin centres, wall half the time.
pub fn random_config(seed: u64) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce4e);
    let (width, height) = (48usize, 32usize);
    let mut cfg = SceneConfig {
        width,
        height,
        camera: Intrinsics {
            fx: 32.0,
            fy: 32.0,
            cx: 23.5,
            cy: 15.5,
        },
        channels: 8,
        background: None,
        objects: Vec::new(),
        ..SceneConfig::default()
    };
    if rng.random_bool(0.5) {
        cfg.background = Some(Background {
            class: 5,
            depth: 45.5,
        });
    }
    let count = rng.random_range(2..=4);
    let mut depths: Vec<u32> = (4..40).collect();
    for _ in 0..count {
        let d = depths.swap_remove(rng.random_range(0..depths.len()));
        cfg.objects.push(ObjectSpec {
            class: rng.random_range(1..5),
            depth: d as f32 + 0.5,
            x: rng.random_range(0..width as i32 - 8) as f32,
            y: rng.random_range(0..height as i32 - 6) as f32,
            w: rng.random_range(6..16) as f32,
            h: rng.random_range(5..12) as f32,
            vx: 2.0 * rng.random_range(-2..=2) as f32,
            vy: 2.0 * rng.random_range(-1..=1) as f32,
        });
    }
    cfg
}

/// A rendered scene. Surface ids index `config.objects`; the background wall
/// has id `objects.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub seed: u64,
    pub camera: CameraModel,
    pub edges: Vec<f32>,
    /// `K` class vectors of length `C`; class 0 is the zero vector.
    pub class_vectors: Vec<Vec<f32>>,
    /// Per frame, per pixel surface id.
    pub surfaces: Vec<Vec<Option<usize>>>,
    /// Per frame, per pixel class (0 where nothing is visible).
    pub labels: Vec<Vec<u16>>,
    pub features: Vec<FeatureMap>,
}

/// Seeded class vectors: zero for class 0, unit length otherwise, mutually
/// orthogonal when `channels >= classes - 1`.
pub fn class_vectors(classes: usize, channels: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = vec![vec![0.0f32; channels]];
    for _ in 1..classes {
        let mut v: Vec<f64> = (0..channels).map(|_| rng.sample(StandardNormal)).collect();
        if basis.len() < channels {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = libm::sqrt(v.iter().map(|a| a * a).sum::<f64>());
        v.iter_mut().for_each(|a| *a /= norm);
        out.push(v.iter().map(|&a| a as f32).collect());
        basis.push(v);
    }
    out
}

pub fn generate(config: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_vectors = class_vectors(config.num_classes, config.channels, &mut rng);
    let noise = Normal::new(0.0f32, config.noise).map_err(|_| Error::param("noise"))?;
    let (w, h, c) = (config.width, config.height, config.channels);

    let mut scene = SyntheticScene {
        camera: config.camera_model()?,
        edges: config.bin_edges()?,
        config: config.clone(),
        seed,
        class_vectors,
        surfaces: Vec::with_capacity(config.frames),
        labels: Vec::with_capacity(config.frames),
        features: Vec::with_capacity(config.frames),
    };
    for f in 0..config.frames {
        let surf: Vec<Option<usize>> = (0..h * w)
            .map(|p| scene.surface_at(f as f32, (p % w) as f32, (p / w) as f32))
            .collect();
        let labels: Vec<u16> = surf.iter().map(|s| scene.surface_class(*s)).collect();
        let mut data = vec![0.0f32; c * h * w];
        for (p, &l) in labels.iter().enumerate() {
            for (ch, &base) in scene.class_vectors[l as usize].iter().enumerate() {
                data[ch * h * w + p] = base + noise.sample(&mut rng);
            }
        }
        scene.features.push(FeatureMap::new(c, h, w, data)?);
        scene.surfaces.push(surf);
        scene.labels.push(labels);
    }
    Ok(scene)
}

impl SyntheticScene {
    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn frames(&self) -> usize {
        self.config.frames
    }

    pub fn current(&self) -> usize {
        self.config.frames - 1
    }

    fn background_id(&self) -> usize {
        self.config.objects.len()
    }

    /// Visible surface at a continuous image location of a (possibly
    /// fractional) frame time.
    pub fn surface_at(&self, frame: f32, x: f32, y: f32) -> Option<usize> {
        let mut best: Option<(usize, f32)> = None;
        for (i, o) in self.config.objects.iter().enumerate() {
            if o.contains(frame, x, y) && best.is_none_or(|(_, d)| o.depth < d) {
                best = Some((i, o.depth));
            }
        }
        if let Some(bg) = &self.config.background {
            if best.is_none_or(|(_, d)| bg.depth < d) {
                return Some(self.background_id());
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn surface_class(&self, s: Option<usize>) -> u16 {
        match s {
            None => 0,
            Some(i) if i == self.background_id() => self.config.background.map_or(0, |b| b.class),
            Some(i) => self.config.objects[i].class,
        }
    }

    pub fn surface_depth(&self, s: Option<usize>) -> Option<f32> {
        match s {
            None => None,
            Some(i) if i == self.background_id() => self.config.background.map(|b| b.depth),
            Some(i) => Some(self.config.objects[i].depth),
        }
    }

    fn surface_velocity(&self, s: Option<usize>) -> (f32, f32) {
        match s {
            Some(i) if i < self.background_id() => {
                let o = &self.config.objects[i];
                (o.vx, o.vy)
            }
            _ => (0.0, 0.0),
        }
    }

    fn check_frame(&self, t: usize) -> Result<()> {
        if t < self.frames() {
            Ok(())
        } else {
            Err(Error::FrameOutOfRange {
                index: t,
                frames: self.frames(),
            })
        }
    }

    /// Motion of every pixel's own surface from `from` to `to`.
    fn motion_field(&self, from: usize, to: usize) -> Result<FlowField> {
        let dt = to as f32 - from as f32;
        let w = self.width();
        let surf = &self.surfaces[from];
        FlowField::from_fn(self.height(), w, |y, x| {
            let (vx, vy) = self.surface_velocity(surf[y * w + x]);
            (vx * dt, vy * dt)
        })
    }

    /// `fwd = Flow^{t→t_prev}` on frame `t`, `bwd = Flow^{t_prev→t}` on frame
    /// `t_prev`. Each pixel carries its own surface's motion.
    pub fn oracle_flow(&self, t: usize, t_prev: usize) -> Result<(FlowField, FlowField)> {
        self.check_frame(t)?;
        self.check_frame(t_prev)?;
        Ok((self.motion_field(t, t_prev)?, self.motion_field(t_prev, t)?))
    }

    /// A pixel of frame `t` is occluded iff its surface point is not the
    /// visible surface at its location in `t_prev`, or that location leaves
    /// the image.
    pub fn oracle_occlusion(&self, t: usize, t_prev: usize) -> Result<OcclusionMask> {
        let (fwd, _) = self.oracle_flow(t, t_prev)?;
        let (w, h) = (self.width(), self.height());
        let mut occ = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = fwd.at(y, x);
                let (qx, qy) = (x as f32 + dx, y as f32 + dy);
                let inside = qx >= 0.0 && qy >= 0.0 && qx <= (w - 1) as f32 && qy <= (h - 1) as f32;
                let own = self.surfaces[t][y * w + x];
                occ[y * w + x] = !inside || self.surface_at(t_prev as f32, qx, qy) != own;
            }
        }
        OcclusionMask::from_bools(h, w, &occ)
    }

    /// Features of the current frame.
    pub fn current_features(&self) -> &FeatureMap {
        &self.features[self.current()]
    }

    /// Features of frames `t-1, …, t-n`.
    pub fn history(&self, n: usize) -> Result<Vec<FeatureMap>> {
        self.history_indices(n)
            .map(|idx| idx.into_iter().map(|f| self.features[f].clone()).collect())
    }

    fn history_indices(&self, n: usize) -> Result<Vec<usize>> {
        if n == 0 || n > self.current() {
            return Err(Error::param(format!(
                "history of {n} frames requested, {} available",
                self.current()
            )));
        }
        Ok((1..=n).map(|i| self.current() - i).collect())
    }

    /// Oracle flow pairs between the current frame and each of `t-1, …, t-n`.
    pub fn flow_pairs(&self, n: usize) -> Result<Vec<FlowPair>> {
        self.history_indices(n)?
            .into_iter()
            .map(|p| {
                let (fwd, bwd) = self.oracle_flow(self.current(), p)?;
                Ok(FlowPair { fwd, bwd })
            })
            .collect()
    }

    /// True surface depth of every pixel of frame `t`.
    pub fn depth_map(&self, t: usize) -> Result<Vec<Option<f32>>> {
        self.check_frame(t)?;
        Ok(self.surfaces[t].iter().map(|&s| self.surface_depth(s)).collect())
    }

    /// Ground-truth voxel labels of the current frame's visible surfaces
    /// (majority vote per voxel, ties to the lower class) and the matching
    /// one-hot depth distribution.
    pub fn oracle_voxels(&self) -> Result<(SemanticVoxelGrid, DepthDistribution)> {
        let t = self.current();
        let (w, h) = (self.width(), self.height());
        let spec = self.config.grid;
        let k = self.config.num_classes;
        let depth = self.depth_map(t)?;
        let mut votes = vec![0u32; spec.num_voxels() * k];
        let (mut visible_objects, mut landed_objects) = (0usize, 0usize);
        for (p, z) in depth.iter().enumerate() {
            let Some(z) = *z else { continue };
            let class = self.labels[t][p] as usize;
            let is_object = self.surfaces[t][p] != Some(self.background_id());
            let point = self.camera.cam_to_ego(self.camera.unproject((p % w) as f32, (p / w) as f32, z));
            visible_objects += is_object as usize;
            if let Some(v) = spec.world_to_voxel(point) {
                landed_objects += is_object as usize;
                votes[spec.linear_index(v) * k + class] += 1;
            }
        }
        if visible_objects > 0 && landed_objects == 0 {
            return Err(Error::InvalidConfig(
                "grid too coarse or misplaced: no visible object lands in it".into(),
            ));
        }
        let labels = votes
            .chunks_exact(k)
            .map(|v| {
                let mut best = 0;
                for c in 1..k {
                    if v[c] > v[best] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect();
        let grid = SemanticVoxelGrid::fully_valid(spec, k, labels)?;
        let dist = DepthDistribution::one_hot(h, w, self.edges.clone(), &depth)?;
        Ok((grid, dist))
    }

    /// Class prototypes for readout (the class vectors).
    pub fn prototypes(&self) -> &[Vec<f32>] {
        &self.class_vectors
    }

    /// Whether every surface depth lies on a depth-bin centre, so lifted and
    /// oracle geometry coincide.
    pub fn depths_on_bin_centers(&self) -> bool {
        let centers = bin_centers(&self.edges);
        let on = |d: f32| centers.iter().any(|&c| (c - d).abs() < 1e-4);
        self.config.objects.iter().all(|o| on(o.depth))
            && self.config.background.is_none_or(|b| on(b.depth))
    }
}

/// Pixels excluded from occlusion scoring: the 3×3 neighbourhood mixes
/// surfaces of frame `t` or mixes oracle mask values.
pub fn boundary_band(scene: &SyntheticScene, t: usize, oracle: &OcclusionMask) -> Result<Vec<bool>> {
    scene.check_frame(t)?;
    let (w, h) = (scene.width(), scene.height());
    if oracle.width() != w || oracle.height() != h {
        return Err(Error::shape("oracle mask does not match the scene"));
    }
    let surf = &scene.surfaces[t];
    let mut band = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (s0, m0) = (surf[y * w + x], oracle.is_occluded(y, x));
            'n: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if surf[ny * w + nx] != s0 || oracle.is_occluded(ny, nx) != m0 {
                        band[y * w + x] = true;
                        break 'n;
                    }
                }
            }
        }
    }
    Ok(band)
}

/// Overwrites `history` at the pre-image `p + fwd(p)` (rounded) of every
/// occluded pixel `p` with `value`. Returns how many pixels were written.
pub fn corrupt_preimage(
    history: &mut FeatureMap,
    fwd: &FlowField,
    occluded: &OcclusionMask,
    value: &[f32],
) -> Result<usize> {
    let (h, w, c) = (history.height(), history.width(), history.channels());
    if fwd.height() != h || fwd.width() != w || occluded.height() != h || occluded.width() != w {
        return Err(Error::shape("corruption inputs differ in size"));
    }
    if value.len() != c {
        return Err(Error::shape("corruption vector length"));
    }
    let mut hit = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !occluded.is_occluded(y, x) {
                continue;
            }
            let (dx, dy) = fwd.at(y, x);
            let (qx, qy) = (libm::roundf(x as f32 + dx), libm::roundf(y as f32 + dy));
            if qx >= 0.0 && qy >= 0.0 && (qx as usize) < w && (qy as usize) < h {
                hit[qy as usize * w + qx as usize] = true;
            }
        }
    }
    let mut data = core::mem::replace(history, FeatureMap::zeros(1, 1, 1)).into_data();
    for (p, _) in hit.iter().enumerate().filter(|(_, &b)| b) {
        for (ch, &v) in value.iter().enumerate() {
            data[ch * h * w + p] = v;
        }
    }
    *history = FeatureMap::new(c, h, w, data)?;
    Ok(hit.iter().filter(|&&b| b).count())
}
