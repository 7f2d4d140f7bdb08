//! Lift-splat view transform: per-pixel depth-bin outer products pooled
//! into a voxel grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grids::{FeatureMap, GridSpec, OcclusionMask, VoxelGrid};

pub const DEFAULT_DEPTH_BINS: usize = 64;
pub const DEFAULT_DEPTH_RANGE: (f32, f32) = (2.0, 51.2);

/// Pinhole intrinsics plus a rigid camera-to-ego transform.
///
/// Camera frame: x right, y down, z forward. `ego = rotation · cam + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraModel {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub rotation: [[f32; 3]; 3],
    pub translation: [f32; 3],
}

/// Camera axes expressed in the X-forward, Y-left, Z-up ego frame.
pub const CAMERA_TO_EGO_AXES: [[f32; 3]; 3] = [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];

impl CameraModel {
    pub fn new(
        fx: f32,
        fy: f32,
        cx: f32,
        cy: f32,
        rotation: [[f32; 3]; 3],
        translation: [f32; 3],
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// A camera at the ego origin looking down +X.
    pub fn forward_facing(fx: f32, fy: f32, cx: f32, cy: f32) -> Result<Self> {
        Self::new(fx, fy, cx, cy, CAMERA_TO_EGO_AXES, [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::param(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::NonFinite("principal point"));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera translation"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f32 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if !((dot - want).abs() <= 1e-5) {
                    return Err(Error::param("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    pub fn cam_to_ego(&self, p: [f32; 3]) -> [f32; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for i in 0..3 {
            out[i] += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    pub fn ego_to_cam(&self, p: [f32; 3]) -> [f32; 3] {
        let r = &self.rotation;
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2];
        }
        out
    }

    /// Camera-frame point of pixel `(u, v)` at depth `z`.
    pub fn unproject(&self, u: f32, v: f32, z: f32) -> [f32; 3] {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }

    /// Pixel coordinates of a camera-frame point with `z > 0`.
    pub fn project(&self, p: [f32; 3]) -> (f32, f32) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }
}

/// `D+1` edges evenly spaced over `[near, far]`.
pub fn uniform_bin_edges(bins: usize, near: f32, far: f32) -> Result<Vec<f32>> {
    if bins == 0 || !(far > near) || !near.is_finite() || !far.is_finite() {
        return Err(Error::param(format!(
            "bad depth bins: {bins} over [{near}, {far}]"
        )));
    }
    let step = (f64::from(far) - f64::from(near)) / bins as f64;
    Ok((0..=bins)
        .map(|i| (f64::from(near) + step * i as f64) as f32)
        .collect())
}

fn check_edges(edges: &[f32]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::param("need at least two depth bin edges"));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("depth bin edges must be finite and strictly increasing"));
    }
    Ok(())
}

pub fn bin_centers(edges: &[f32]) -> Vec<f32> {
    edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Index of the bin containing `depth` (half-open `[e_d, e_{d+1})`).
pub fn bin_of(edges: &[f32], depth: f32) -> Option<usize> {
    if !(depth >= edges[0] && depth < edges[edges.len() - 1]) {
        return None;
    }
    Some(edges.partition_point(|&e| e <= depth) - 1)
}

/// Per-pixel weights over depth bins, laid out `(d, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution {
    bins: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    edges: Vec<f32>,
}

impl DepthDistribution {
    pub fn new(height: usize, width: usize, edges: Vec<f32>, data: Vec<f32>) -> Result<Self> {
        check_edges(&edges)?;
        let bins = edges.len() - 1;
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimension("depth map must be non-empty".into()));
        }
        if data.len() != bins * height * width {
            return Err(Error::shape(format!(
                "depth data has {} values, expected {}",
                data.len(),
                bins * height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("depth distribution"));
        }
        Ok(Self {
            bins,
            height,
            width,
            data,
            edges,
        })
    }

    /// One-hot rows from per-pixel metric depths. Pixels without a depth, or
    /// with a depth outside the bin range, get an all-zero row.
    pub fn one_hot(height: usize, width: usize, edges: Vec<f32>, depth: &[Option<f32>]) -> Result<Self> {
        check_edges(&edges)?;
        if depth.len() != height * width {
            return Err(Error::shape("depth map size"));
        }
        let bins = edges.len() - 1;
        let n = height * width;
        let mut data = vec![0.0; bins * n];
        for (p, z) in depth.iter().enumerate() {
            if let Some(d) = z.and_then(|z| bin_of(&edges, z)) {
                data[d * n + p] = 1.0;
            }
        }
        Self::new(height, width, edges, data)
    }

    pub fn uniform(height: usize, width: usize, edges: Vec<f32>) -> Result<Self> {
        check_edges(&edges)?;
        let bins = edges.len() - 1;
        let data = vec![1.0 / bins as f32; bins * height * width];
        Self::new(height, width, edges, data)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn edges(&self) -> &[f32] {
        &self.edges
    }

    #[inline]
    pub fn get(&self, d: usize, y: usize, x: usize) -> f32 {
        self.data[(d * self.height + y) * self.width + x]
    }

    /// Whether every pixel's weights are non-negative and sum to 1 within `tol`.
    pub fn is_distribution(&self, tol: f32) -> bool {
        let n = self.height * self.width;
        (0..n).all(|p| {
            let mut s = 0.0f32;
            for d in 0..self.bins {
                let v = self.data[d * n + p];
                if v < 0.0 {
                    return false;
                }
                s += v;
            }
            (s - 1.0).abs() <= tol
        })
    }
}

/// `C×D×H×W` lifted features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumFeatures {
    channels: usize,
    bins: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FrustumFeatures {
    pub fn new(channels: usize, bins: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * bins * height * width {
            return Err(Error::shape("frustum data length"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frustum features"));
        }
        Ok(Self {
            channels,
            bins,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> usize {
        self.bins * self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, d: usize, y: usize, x: usize) -> f32 {
        self.data[((c * self.bins + d) * self.height + y) * self.width + x]
    }
}

/// `out(c, d, y, x) = feature(c, y, x) · depth(d, y, x)`.
pub fn lift(feature: &FeatureMap, depth: &DepthDistribution) -> Result<FrustumFeatures> {
    if feature.height() != depth.height || feature.width() != depth.width {
        return Err(Error::shape(format!(
            "features {}x{} vs depth {}x{}",
            feature.height(),
            feature.width(),
            depth.height,
            depth.width
        )));
    }
    let n = feature.pixels();
    let mut data = Vec::with_capacity(feature.channels() * depth.bins * n);
    for c in 0..feature.channels() {
        let f = feature.plane(c);
        for d in 0..depth.bins {
            let dp = &depth.data[d * n..(d + 1) * n];
            data.extend(f.iter().zip(dp).map(|(a, b)| a * b));
        }
    }
    Ok(FrustumFeatures {
        channels: feature.channels(),
        bins: depth.bins,
        height: depth.height,
        width: depth.width,
        data,
    })
}

/// Ego-frame position of every frustum cell, laid out `(d, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumPoints {
    bins: usize,
    height: usize,
    width: usize,
    points: Vec<[f32; 3]>,
}

impl FrustumPoints {
    pub fn new(bins: usize, height: usize, width: usize, points: Vec<[f32; 3]>) -> Result<Self> {
        if points.len() != bins * height * width {
            return Err(Error::shape("frustum point count"));
        }
        Ok(Self {
            bins,
            height,
            width,
            points,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn at(&self, d: usize, y: usize, x: usize) -> [f32; 3] {
        self.points[(d * self.height + y) * self.width + x]
    }
}

/// Unprojects pixel `(x, y)` at each bin-centre depth and moves it to ego.
pub fn frustum_points(cam: &CameraModel, height: usize, width: usize, edges: &[f32]) -> Result<FrustumPoints> {
    cam.validate()?;
    check_edges(edges)?;
    let centers = bin_centers(edges);
    let mut points = Vec::with_capacity(centers.len() * height * width);
    for &z in &centers {
        for y in 0..height {
            for x in 0..width {
                points.push(cam.cam_to_ego(cam.unproject(x as f32, y as f32, z)));
            }
        }
    }
    FrustumPoints::new(centers.len(), height, width, points)
}

/// Voxel assignment of every in-bounds frustum cell, sorted by voxel then
/// cell so accumulation order is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingPlan {
    spec: GridSpec,
    bins: usize,
    height: usize,
    width: usize,
    order: Vec<(u32, u32)>,
}

impl PoolingPlan {
    pub fn new(points: &FrustumPoints, spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        if points.points.len() > u32::MAX as usize || spec.num_voxels() > u32::MAX as usize {
            return Err(Error::param("frustum or grid too large for pooling plan"));
        }
        let mut order: Vec<(u32, u32)> = points
            .points
            .iter()
            .enumerate()
            .filter_map(|(cell, &p)| {
                spec.world_to_voxel(p)
                    .map(|v| (spec.linear_index(v) as u32, cell as u32))
            })
            .collect();
        order.sort_unstable();
        Ok(Self {
            spec: *spec,
            bins: points.bins,
            height: points.height,
            width: points.width,
            order,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Number of frustum cells that land inside the grid.
    pub fn in_bounds(&self) -> usize {
        self.order.len()
    }

    /// `(voxel, cell)` pairs in accumulation order.
    pub fn assignments(&self) -> &[(u32, u32)] {
        &self.order
    }

    fn check_frustum(&self, bins: usize, height: usize, width: usize) -> Result<()> {
        if (bins, height, width) != (self.bins, self.height, self.width) {
            return Err(Error::shape(format!(
                "frustum {bins}x{height}x{width} vs plan {}x{}x{}",
                self.bins, self.height, self.width
            )));
        }
        Ok(())
    }

    /// Scatter-adds every cell's channel vector into its voxel.
    pub fn pool(&self, frustum: &FrustumFeatures) -> Result<VoxelGrid> {
        self.check_frustum(frustum.bins, frustum.height, frustum.width)?;
        let cells = frustum.cells();
        let nv = self.spec.num_voxels();
        let mut out = vec![0.0f32; frustum.channels * nv];
        for c in 0..frustum.channels {
            let src = &frustum.data[c * cells..(c + 1) * cells];
            let dst = &mut out[c * nv..(c + 1) * nv];
            for &(v, cell) in &self.order {
                dst[v as usize] += src[cell as usize];
            }
        }
        Ok(VoxelGrid::from_parts_unchecked(frustum.channels, self.spec, out))
    }

    /// `pool(lift(feature, depth))` without materialising the frustum.
    /// Produces the same bits as the two-step path.
    pub fn lift_pool(&self, feature: &FeatureMap, depth: &DepthDistribution) -> Result<VoxelGrid> {
        if feature.height() != depth.height || feature.width() != depth.width {
            return Err(Error::shape("features and depth differ in size"));
        }
        self.check_frustum(depth.bins, depth.height, depth.width)?;
        let n = feature.pixels();
        let nv = self.spec.num_voxels();
        let mut out = vec![0.0f32; feature.channels() * nv];
        for c in 0..feature.channels() {
            let f = feature.plane(c);
            let dst = &mut out[c * nv..(c + 1) * nv];
            for &(v, cell) in &self.order {
                let cell = cell as usize;
                dst[v as usize] += f[cell % n] * depth.data[cell];
            }
        }
        Ok(VoxelGrid::from_parts_unchecked(feature.channels(), self.spec, out))
    }

    /// Lifts and pools a mask, then clamps every voxel to `[0, 1]`.
    pub fn lift_mask(&self, mask: &OcclusionMask, depth: &DepthDistribution) -> Result<VoxelGrid> {
        let pooled = self.lift_pool(&mask.as_feature_map(), depth)?;
        let spec = *pooled.spec();
        let data = pooled.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(VoxelGrid::from_parts_unchecked(1, spec, data))
    }
}

pub fn voxel_pool(frustum: &FrustumFeatures, points: &FrustumPoints, spec: &GridSpec) -> Result<VoxelGrid> {
    PoolingPlan::new(points, spec)?.pool(frustum)
}

pub fn lift_mask(
    mask: &OcclusionMask,
    depth: &DepthDistribution,
    points: &FrustumPoints,
    spec: &GridSpec,
) -> Result<VoxelGrid> {
    PoolingPlan::new(points, spec)?.lift_mask(mask, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_depth(rng: &mut ChaCha8Rng, bins: usize, h: usize, w: usize) -> DepthDistribution {
        let n = h * w;
        let mut data: Vec<f32> = (0..bins * n).map(|_| rng.random_range(0.0..1.0)).collect();
        for p in 0..n {
            let s: f32 = (0..bins).map(|d| data[d * n + p]).sum();
            for d in 0..bins {
                data[d * n + p] /= s;
            }
        }
        DepthDistribution::new(h, w, uniform_bin_edges(bins, 1.0, 9.0).unwrap(), data).unwrap()
    }

    #[test]
    fn one_hot_lift_selects_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let f = random_map(&mut rng, 3, 4, 5);
        let edges = uniform_bin_edges(6, 1.0, 7.0).unwrap();
        let depth = DepthDistribution::one_hot(4, 5, edges, &[Some(3.5); 20]).unwrap();
        let fr = lift(&f, &depth).unwrap();
        for c in 0..3 {
            for d in 0..6 {
                for y in 0..4 {
                    for x in 0..5 {
                        let want = if d == 2 { f.get(c, y, x) } else { 0.0 };
                        assert_eq!(fr.get(c, d, y, x), want);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_lift_divides() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_map(&mut rng, 2, 3, 3);
        let depth = DepthDistribution::uniform(3, 3, uniform_bin_edges(4, 1.0, 5.0).unwrap()).unwrap();
        let fr = lift(&f, &depth).unwrap();
        for d in 0..4 {
            assert!((fr.get(1, d, 2, 1) - f.get(1, 2, 1) / 4.0).abs() < 1e-7);
        }
        assert!(depth.is_distribution(1e-6));
    }

    #[test]
    fn lift_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let f = random_map(&mut rng, 3, 4, 4);
        let depth = random_depth(&mut rng, 5, 4, 4);
        let fr = lift(&f, &depth).unwrap();
        for c in 0..3 {
            for d in 0..5 {
                for y in 0..4 {
                    for x in 0..4 {
                        assert_eq!(fr.get(c, d, y, x), f.get(c, y, x) * depth.get(d, y, x));
                    }
                }
            }
        }
        assert!(lift(&f, &random_depth(&mut rng, 5, 4, 3)).is_err());
    }

    #[test]
    fn depth_edges_must_increase() {
        assert!(DepthDistribution::new(1, 1, vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(uniform_bin_edges(0, 1.0, 2.0).is_err());
        let e = uniform_bin_edges(DEFAULT_DEPTH_BINS, DEFAULT_DEPTH_RANGE.0, DEFAULT_DEPTH_RANGE.1).unwrap();
        assert_eq!(e.len(), 65);
        assert!((e[64] - 51.2).abs() < 1e-5);
        assert_eq!(bin_of(&e, 2.0), Some(0));
        assert_eq!(bin_of(&e, 51.2), None);
        assert_eq!(bin_of(&e, 1.9), None);
    }

    #[test]
    fn principal_point_unprojects_on_axis() {
        let cam = CameraModel::new(500.0, 400.0, 32.0, 24.0, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3]).unwrap();
        assert_eq!(cam.cam_to_ego(cam.unproject(32.0, 24.0, 7.0)), [0.0, 0.0, 7.0]);
        assert_eq!(cam.unproject(32.0 + 500.0, 24.0, 1.0), [1.0, 0.0, 1.0]);
        let pts = frustum_points(&cam, 48, 64, &[6.0, 8.0]).unwrap();
        assert_eq!(pts.at(0, 24, 32), [0.0, 0.0, 7.0]);
    }

    #[test]
    fn rejects_bad_camera() {
        assert!(CameraModel::forward_facing(0.0, 1.0, 0.0, 0.0).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, skew, [0.0; 3]).is_err());
    }

    #[test]
    fn project_unproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let a: f32 = rng.random_range(-0.3..0.3);
            let (s, c) = (libm::sinf(a), libm::cosf(a));
            let rot = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
            let cam = CameraModel::new(
                rng.random_range(50.0..800.0),
                rng.random_range(50.0..800.0),
                rng.random_range(0.0..64.0),
                rng.random_range(0.0..48.0),
                rot,
                [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)],
            )
            .unwrap();
            let edges = uniform_bin_edges(4, 2.0, 40.0).unwrap();
            let pts = frustum_points(&cam, 12, 16, &edges).unwrap();
            for d in 0..4 {
                for y in 0..12 {
                    for x in 0..16 {
                        let (u, v) = cam.project(cam.ego_to_cam(pts.at(d, y, x)));
                        assert!((u - x as f32).abs() < 1e-3 && (v - y as f32).abs() < 1e-3);
                    }
                }
            }
        }
    }

    fn random_instance(seed: u64) -> (FrustumFeatures, FrustumPoints, GridSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, d, h, w) = (3, 4, 5, 5);
        let data: Vec<f32> = (0..c * d * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fr = FrustumFeatures::new(c, d, h, w, data).unwrap();
        let pts: Vec<[f32; 3]> = (0..d * h * w)
            .map(|_| [rng.random_range(-1.0..9.0), rng.random_range(-1.0..9.0), rng.random_range(-1.0..5.0)])
            .collect();
        let pts = FrustumPoints::new(d, h, w, pts).unwrap();
        (fr, pts, GridSpec::new([8, 8, 4], 1.0, [0.0; 3]).unwrap())
    }

    #[test]
    fn pool_matches_map_oracle() {
        for seed in 0..10 {
            let (fr, pts, spec) = random_instance(seed);
            let grid = voxel_pool(&fr, &pts, &spec).unwrap();
            let mut acc: BTreeMap<(usize, [usize; 3]), f64> = BTreeMap::new();
            for c in 0..fr.channels() {
                for d in 0..fr.bins() {
                    for y in 0..fr.height() {
                        for x in 0..fr.width() {
                            let p = pts.at(d, y, x);
                            let v = [p[0].floor(), p[1].floor(), p[2].floor()];
                            if v.iter().zip(spec.dims).all(|(&i, n)| i >= 0.0 && (i as usize) < n) {
                                let key = (c, v.map(|i| i as usize));
                                *acc.entry(key).or_default() += f64::from(fr.get(c, d, y, x));
                            }
                        }
                    }
                }
            }
            for c in 0..3 {
                for i in 0..spec.num_voxels() {
                    let v = spec.unravel(i);
                    let want = acc.get(&(c, v)).copied().unwrap_or(0.0);
                    let got = f64::from(grid.get(c, v));
                    assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn single_cell_and_single_voxel() {
        let spec = GridSpec::new([4, 4, 4], 1.0, [0.0; 3]).unwrap();
        let mut data = vec![0.0; 2 * 2 * 2 * 2];
        data[5] = 3.0;
        let fr = FrustumFeatures::new(1, 2, 2, 4, data[..16].to_vec()).unwrap();
        let pts = FrustumPoints::new(2, 2, 4, (0..16).map(|i| [(i % 4) as f32 + 0.5, 1.5, 2.5]).collect()).unwrap();
        let g = voxel_pool(&fr, &pts, &spec).unwrap();
        assert_eq!(g.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(g.get(0, [1, 1, 2]), 3.0);

        let fr = FrustumFeatures::new(1, 2, 2, 4, (0..16).map(|i| i as f32).collect()).unwrap();
        let pts = FrustumPoints::new(2, 2, 4, vec![[0.2, 0.3, 0.4]; 16]).unwrap();
        let g = voxel_pool(&fr, &pts, &spec).unwrap();
        assert_eq!(g.get(0, [0, 0, 0]), 120.0);
    }

    #[test]
    fn fused_lift_pool_matches_two_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let f = random_map(&mut rng, 4, 6, 6);
        let depth = random_depth(&mut rng, 8, 6, 6);
        let cam = CameraModel::forward_facing(4.0, 4.0, 3.0, 3.0).unwrap();
        let pts = frustum_points(&cam, 6, 6, depth.edges()).unwrap();
        let spec = GridSpec::new([8, 8, 8], 1.0, [0.0, -4.0, -4.0]).unwrap();
        let plan = PoolingPlan::new(&pts, &spec).unwrap();
        let two = plan.pool(&lift(&f, &depth).unwrap()).unwrap();
        let one = plan.lift_pool(&f, &depth).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn lift_mask_examples() {
        let cam = CameraModel::forward_facing(4.0, 4.0, 3.0, 3.0).unwrap();
        let edges = uniform_bin_edges(4, 1.0, 5.0).unwrap();
        let pts = frustum_points(&cam, 6, 6, &edges).unwrap();
        let spec = GridSpec::new([8, 8, 8], 1.0, [0.0, -4.0, -4.0]).unwrap();
        let depth = DepthDistribution::one_hot(6, 6, edges.clone(), &[Some(2.5); 36]).unwrap();
        let z = lift_mask(&OcclusionMask::zeros(6, 6), &depth, &pts, &spec).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let o = lift_mask(&OcclusionMask::ones(6, 6), &depth, &pts, &spec).unwrap();
        let plan = PoolingPlan::new(&pts, &spec).unwrap();
        for &(v, cell) in plan.assignments() {
            if cell as usize / 36 == 1 {
                assert_eq!(o.data()[v as usize], 1.0);
            }
        }
        assert!(o.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mass_conservation_and_permutation(seed in any::<u64>()) {
                let (fr, pts, spec) = random_instance(seed);
                let grid = voxel_pool(&fr, &pts, &spec).unwrap();
                let plan = PoolingPlan::new(&pts, &spec).unwrap();
                let cells = fr.cells();
                for c in 0..fr.channels() {
                    let inb: f64 = plan.assignments().iter()
                        .map(|&(_, cell)| f64::from(fr.data()[c * cells + cell as usize])).sum();
                    let got: f64 = grid.channel(c).iter().map(|&v| f64::from(v)).sum();
                    prop_assert!((got - inb).abs() <= 1e-3 * inb.abs().max(1.0));
                }
                // Reverse the cell order (same cells, different positions).
                let rev_pts = FrustumPoints::new(fr.bins(), fr.height(), fr.width(),
                    pts.points().iter().rev().copied().collect()).unwrap();
                let mut rev = Vec::new();
                for c in 0..fr.channels() {
                    rev.extend(fr.data()[c * cells..(c + 1) * cells].iter().rev());
                }
                let rev_fr = FrustumFeatures::new(fr.channels(), fr.bins(), fr.height(), fr.width(), rev).unwrap();
                let grid2 = voxel_pool(&rev_fr, &rev_pts, &spec).unwrap();
                for (a, b) in grid.data().iter().zip(grid2.data()) {
                    prop_assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0));
                }
            }

            #[test]
            fn lift_is_bilinear(seed in any::<u64>(), a in -2.0f32..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random_map(&mut rng, 2, 3, 3);
                let d = random_depth(&mut rng, 3, 3, 3);
                let fa = FeatureMap::new(2, 3, 3, f.data().iter().map(|v| a * v).collect()).unwrap();
                let lhs = lift(&fa, &d).unwrap();
                let rhs = lift(&f, &d).unwrap();
                for (l, r) in lhs.data().iter().zip(rhs.data()) {
                    prop_assert!((l - a * r).abs() <= 1e-6);
                }
            }
        }
    }
}
