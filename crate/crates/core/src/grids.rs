//! Dense array types shared by every stage.
//!
//! Layouts are channel-major, then row-major spatial:
//! feature maps are `(c, y, x)`, voxel grids `(c, x, y, z)`. Voxel axes follow
//! the ego frame used by SemanticKITTI: X forward, Y left, Z up.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

fn check_finite(data: &[f32], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "{what}: data length {got}, expected {want}"
        )))
    }
}

fn check_positive(dims: &[usize], what: &str) -> Result<()> {
    if dims.iter().all(|&d| d > 0) {
        Ok(())
    } else {
        Err(Error::InvalidDimension(format!(
            "{what} dimensions must be positive, got {dims:?}"
        )))
    }
}

/// A `C×H×W` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_positive(&[channels, height, width], "feature map")?;
        check_len(data.len(), channels * height * width, "feature map")?;
        check_finite(&data, "feature map")?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Builds a map by evaluating `f(c, y, x)` for every element.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// One channel as a row-major `H×W` slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    /// The channel vector at pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub(crate) fn expect_same_shape(&self, other: &FeatureMap, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )))
        }
    }

    pub(crate) fn from_parts_unchecked(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }
}

/// Per-pixel displacement `(dx, dy)` in pixels, stored as two planes.
///
/// `Flow^{a→b}` maps a pixel `p` of frame `a` to `p + flow(p)` in frame `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        check_positive(&[height, width], "flow field")?;
        check_len(dx.len(), height * width, "flow dx")?;
        check_len(dy.len(), height * width, "flow dy")?;
        let mut data = dx;
        data.extend_from_slice(&dy);
        check_finite(&data, "flow field")?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        let n = height * width;
        let mut data = vec![dx; 2 * n];
        data[n..].fill(dy);
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds a flow from `f(y, x) -> (dx, dy)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let n = height * width;
        let mut dx = Vec::with_capacity(n);
        let mut dy = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                dx.push(a);
                dy.push(b);
            }
        }
        Self::new(height, width, dx, dy)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dx(&self) -> &[f32] {
        &self.data[..self.height * self.width]
    }

    pub fn dy(&self) -> &[f32] {
        &self.data[self.height * self.width..]
    }

    /// Both planes, `dx` first; a 2-channel feature map layout.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.data[i], self.data[self.height * self.width + i])
    }

    /// View as a 2-channel feature map so it can be bilinearly sampled.
    pub fn as_feature_map(&self) -> FeatureMap {
        FeatureMap::from_parts_unchecked(2, self.height, self.width, self.data.clone())
    }

    pub(crate) fn expect_dims(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.height == height && self.width == width {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: flow is {}x{}, expected {height}x{width}",
                self.height, self.width
            )))
        }
    }
}

/// Binary `H×W` mask; 1 marks an occluded or unreliable pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl OcclusionMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_positive(&[height, width], "occlusion mask")?;
        check_len(data.len(), height * width, "occlusion mask")?;
        if let Some(v) = data.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::param(format!(
                "occlusion mask values must be 0 or 1, found {v}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, false)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, true)
    }

    pub fn filled(height: usize, width: usize, occluded: bool) -> Self {
        let v = if occluded { 1.0 } else { 0.0 };
        Self {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub fn from_bools(height: usize, width: usize, occluded: &[bool]) -> Result<Self> {
        check_positive(&[height, width], "occlusion mask")?;
        check_len(occluded.len(), height * width, "occlusion mask")?;
        Ok(Self {
            height,
            width,
            data: occluded.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        })
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

    #[inline]
    pub fn is_occluded(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0.0
    }

    pub fn occluded_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v != 0.0).collect()
    }

    /// The mask as a 1-channel feature map.
    pub fn as_feature_map(&self) -> FeatureMap {
        FeatureMap::from_parts_unchecked(1, self.height, self.width, self.data.clone())
    }
}

/// Geometry of a regular voxel grid: voxel counts, edge length and the world
/// position of the minimum corner of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size: f32,
    pub origin: [f32; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], voxel_size: f32, origin: [f32; 3]) -> Result<Self> {
        let spec = Self {
            dims,
            voxel_size,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 256×256×32 voxels of 0.2 m: 51.2 m forward, ±25.6 m lateral, 6.4 m tall.
    pub fn semantic_kitti() -> Self {
        Self {
            dims: [256, 256, 32],
            voxel_size: 0.2,
            origin: [0.0, -25.6, -2.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive(&self.dims, "grid")?;
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidDimension(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        check_finite(&self.origin, "grid origin")
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// World-space size of the grid along each axis, in meters.
    pub fn extent(&self) -> [f32; 3] {
        self.dims.map(|d| d as f32 * self.voxel_size)
    }

    #[inline]
    pub fn linear_index(&self, v: [usize; 3]) -> usize {
        (v[0] * self.dims[1] + v[1]) * self.dims[2] + v[2]
    }

    pub fn unravel(&self, index: usize) -> [usize; 3] {
        let z = index % self.dims[2];
        let rest = index / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], z]
    }

    /// `floor((p - origin) / voxel_size)` per axis, or `None` when outside.
    #[inline]
    pub fn world_to_voxel(&self, p: [f32; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for k in 0..3 {
            let rel = (f64::from(p[k]) - f64::from(self.origin[k])) / f64::from(self.voxel_size);
            let i = libm::floor(rel);
            if !(i >= 0.0 && i < self.dims[k] as f64) {
                return None;
            }
            out[k] = i as usize;
        }
        Some(out)
    }

    pub fn voxel_center(&self, v: [usize; 3]) -> [f32; 3] {
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = self.origin[k] + (v[k] as f32 + 0.5) * self.voxel_size;
        }
        out
    }
}

/// A `C×X×Y×Z` feature volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    channels: usize,
    spec: GridSpec,
    data: Vec<f32>,
}

/// A zero-filled single-channel grid.
pub fn make_grid(dims: [usize; 3], voxel_size: f32, origin: [f32; 3]) -> Result<VoxelGrid> {
    let spec = GridSpec::new(dims, voxel_size, origin)?;
    Ok(VoxelGrid::zeros(1, spec))
}

impl VoxelGrid {
    pub fn new(channels: usize, spec: GridSpec, data: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        check_positive(&[channels], "voxel channel")?;
        check_len(data.len(), channels * spec.num_voxels(), "voxel grid")?;
        check_finite(&data, "voxel grid")?;
        Ok(Self {
            channels,
            spec,
            data,
        })
    }

    pub fn zeros(channels: usize, spec: GridSpec) -> Self {
        Self {
            channels,
            spec,
            data: vec![0.0; channels * spec.num_voxels()],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spec.num_voxels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, v: [usize; 3]) -> f32 {
        self.data[c * self.spec.num_voxels() + self.spec.linear_index(v)]
    }

    /// Feature vector of the voxel at linear index `i`.
    pub fn voxel(&self, i: usize) -> Vec<f32> {
        let n = self.spec.num_voxels();
        (0..self.channels).map(|c| self.data[c * n + i]).collect()
    }

    pub fn same_layout(&self, other: &VoxelGrid) -> bool {
        self.channels == other.channels && self.spec.dims == other.spec.dims
    }

    pub(crate) fn from_parts_unchecked(channels: usize, spec: GridSpec, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * spec.num_voxels());
        Self {
            channels,
            spec,
            data,
        }
    }
}

/// Per-voxel class labels (0 = empty) with a validity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVoxelGrid {
    spec: GridSpec,
    num_classes: usize,
    labels: Vec<u16>,
    valid: Vec<bool>,
}

impl SemanticVoxelGrid {
    pub fn new(
        spec: GridSpec,
        num_classes: usize,
        labels: Vec<u16>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        spec.validate()?;
        if num_classes == 0 {
            return Err(Error::param("number of classes must be positive"));
        }
        check_len(labels.len(), spec.num_voxels(), "labels")?;
        check_len(valid.len(), spec.num_voxels(), "validity volume")?;
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: u32::from(l),
                classes: num_classes,
            });
        }
        Ok(Self {
            spec,
            num_classes,
            labels,
            valid,
        })
    }

    /// All voxels valid.
    pub fn fully_valid(spec: GridSpec, num_classes: usize, labels: Vec<u16>) -> Result<Self> {
        let n = labels.len();
        Self::new(spec, num_classes, labels, vec![true; n])
    }

    pub fn empty(spec: GridSpec, num_classes: usize) -> Self {
        let n = spec.num_voxels();
        Self {
            spec,
            num_classes,
            labels: vec![0; n],
            valid: vec![true; n],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Same labels, different validity volume.
    pub fn with_valid(&self, valid: Vec<bool>) -> Result<Self> {
        Self::new(self.spec, self.num_classes, self.labels.clone(), valid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_grid_semantic_kitti_geometry() {
        let g = make_grid([256, 256, 32], 0.2, [0.0, -25.6, -2.0]).unwrap();
        let e = g.spec().extent();
        assert!((e[0] - 51.2).abs() < 1e-4);
        assert!((e[1] - 51.2).abs() < 1e-4);
        assert!((e[2] - 6.4).abs() < 1e-4);
        assert_eq!(g.data().len(), 256 * 256 * 32);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_voxel_grid() {
        let g = make_grid([1, 1, 1], 1.0, [0.0; 3]).unwrap();
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(make_grid([0, 1, 1], 1.0, [0.0; 3]).is_err());
        assert!(make_grid([1, 1, 1], 0.0, [0.0; 3]).is_err());
        assert!(make_grid([1, 1, 1], -1.0, [0.0; 3]).is_err());
    }

    #[test]
    fn world_to_voxel_corners() {
        let o = [1.5, -2.0, 0.25];
        let spec = GridSpec::new([16, 16, 4], 0.5, o).unwrap();
        assert_eq!(spec.world_to_voxel(o), Some([0, 0, 0]));
        let eps = 1e-3;
        let far = [
            o[0] + 8.0 - eps,
            o[1] + 8.0 - eps,
            o[2] + 2.0 - eps,
        ];
        assert_eq!(spec.world_to_voxel(far), Some([15, 15, 3]));
        assert_eq!(spec.world_to_voxel([o[0] + 8.0, o[1], o[2]]), None);
        assert_eq!(spec.world_to_voxel([o[0] - eps, o[1], o[2]]), None);
    }

    #[test]
    fn voxel_center_round_trip_exhaustive() {
        let spec = GridSpec::semantic_kitti();
        for x in (0..256).step_by(7) {
            for y in (0..256).step_by(5) {
                for z in 0..32 {
                    let v = [x, y, z];
                    assert_eq!(spec.world_to_voxel(spec.voxel_center(v)), Some(v));
                }
            }
        }
    }

    #[test]
    fn feature_map_rejects_nan_and_bad_len() {
        assert!(matches!(
            FeatureMap::new(1, 1, 2, vec![0.0, f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(FeatureMap::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FlowField::new(1, 1, vec![f32::INFINITY], vec![0.0]).is_err());
    }

    #[test]
    fn occlusion_mask_is_binary() {
        assert!(OcclusionMask::new(1, 2, vec![0.0, 0.5]).is_err());
        assert_eq!(OcclusionMask::new(1, 2, vec![0.0, 1.0]).unwrap().occluded_count(), 1);
    }

    #[test]
    fn semantic_grid_rejects_out_of_range_label() {
        let spec = GridSpec::new([1, 1, 2], 1.0, [0.0; 3]).unwrap();
        assert!(SemanticVoxelGrid::fully_valid(spec, 3, vec![0, 3]).is_err());
        assert!(SemanticVoxelGrid::new(spec, 3, vec![0, 2], vec![true]).is_err());
    }

    #[test]
    fn unravel_inverts_linear_index() {
        let spec = GridSpec::new([3, 4, 5], 1.0, [0.0; 3]).unwrap();
        for i in 0..spec.num_voxels() {
            assert_eq!(spec.linear_index(spec.unravel(i)), i);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn center_round_trip(x in 0usize..16, y in 0usize..16, z in 0usize..4,
                                 vs in 0.05f32..2.0, ox in -30f32..30.0, oy in -30f32..30.0) {
                let spec = GridSpec::new([16, 16, 4], vs, [ox, oy, -2.0]).unwrap();
                prop_assert_eq!(spec.world_to_voxel(spec.voxel_center([x, y, z])), Some([x, y, z]));
            }

            #[test]
            fn construction_rejects_nan(i in 0usize..12) {
                let mut data = vec![0.5f32; 12];
                data[i] = f32::NAN;
                prop_assert!(FeatureMap::new(3, 2, 2, data).is_err());
            }
        }
    }
}
