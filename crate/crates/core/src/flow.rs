//! Flow-guided bilinear warping and forward-backward consistency checking.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grids::{FeatureMap, FlowField, OcclusionMask};
use crate::par::for_each_chunk;

/// Residual stored for pixels whose round trip leaves the image.
pub const RESIDUAL_SENTINEL: f32 = 1e9;

/// The (up to) four bilinear corners of a sample location that are inside
/// the image and carry non-zero weight.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Taps {
    idx: [usize; 4],
    w: [f32; 4],
    n: usize,
}

impl Taps {
    pub(crate) fn new(height: usize, width: usize, x: f32, y: f32) -> Self {
        let mut taps = Taps::default();
        if !(x.is_finite() && y.is_finite()) {
            return taps;
        }
        let x0 = libm::floorf(x);
        let y0 = libm::floorf(y);
        let ax = x - x0;
        let ay = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let corners = [
            (x0, y0, (1.0 - ax) * (1.0 - ay)),
            (x0 + 1, y0, ax * (1.0 - ay)),
            (x0, y0 + 1, (1.0 - ax) * ay),
            (x0 + 1, y0 + 1, ax * ay),
        ];
        for (cx, cy, w) in corners {
            if w != 0.0 && cx >= 0 && cy >= 0 && (cx as usize) < width && (cy as usize) < height {
                taps.idx[taps.n] = cy as usize * width + cx as usize;
                taps.w[taps.n] = w;
                taps.n += 1;
            }
        }
        taps
    }

    #[inline]
    pub(crate) fn is_valid(&self) -> bool {
        self.n > 0
    }

    /// Interpolates one `H×W` plane. Starts from `-0.0`, the additive
    /// identity, so a single unit-weight tap reproduces its value bit-exactly.
    #[inline]
    pub(crate) fn apply(&self, plane: &[f32]) -> f32 {
        if self.n == 0 {
            return 0.0;
        }
        let mut acc = -0.0f32;
        for k in 0..self.n {
            acc += self.w[k] * plane[self.idx[k]];
        }
        acc
    }
}

/// Bilinear sample of every channel at `(x, y)`.
///
/// Corners outside `[0, W-1]×[0, H-1]` contribute zero. The flag is false
/// when no corner with non-zero weight is inside the image, in which case the
/// returned vector is all zeros.
pub fn bilinear_sample(map: &FeatureMap, x: f32, y: f32) -> (Vec<f32>, bool) {
    let taps = Taps::new(map.height(), map.width(), x, y);
    let v = (0..map.channels())
        .map(|c| taps.apply(map.plane(c)))
        .collect();
    (v, taps.is_valid())
}

/// Output of [`warp`]: the resampled features and which pixels drew on at
/// least one in-image corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub features: FeatureMap,
    pub valid: Vec<bool>,
}

/// `out(c, y, x) = feature(c, y + dy, x + dx)` with bilinear interpolation.
///
/// To align frame `t-i` with frame `t`, pass the history features and the
/// flow `Flow^{t→t-i}` defined on frame `t`.
pub fn warp(feature: &FeatureMap, flow: &FlowField) -> Result<Warped> {
    let (h, w) = (feature.height(), feature.width());
    flow.expect_dims(h, w, "warp")?;
    let taps: Vec<Taps> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let (dx, dy) = flow.at(y, x);
            Taps::new(h, w, x as f32 + dx, y as f32 + dy)
        })
        .collect();

    let mut out = vec![0.0f32; feature.channels() * h * w];
    for_each_chunk(&mut out, h * w, |c, plane| {
        let src = feature.plane(c);
        for (o, t) in plane.iter_mut().zip(&taps) {
            *o = t.apply(src);
        }
    });
    Ok(Warped {
        features: FeatureMap::from_parts_unchecked(feature.channels(), h, w, out),
        valid: taps.iter().map(Taps::is_valid).collect(),
    })
}

/// How round-trip locations near the image border are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BorderPolicy {
    /// Missing corners contribute zero; only a location with no in-image
    /// corner is flagged.
    ZeroPad,
    /// Any location outside `[0, W-1]×[0, H-1]` is flagged.
    #[default]
    MarkOccluded,
}

/// Optional relative test `|Δ|² > α(|f|² + |b|²) + β`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelativeTest {
    pub alpha: f32,
    pub beta: f32,
}

impl Default for RelativeTest {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ConsistencyConfig {
    /// Absolute residual threshold in pixels.
    pub tau: f32,
    pub border: BorderPolicy,
    /// When set, replaces the absolute `tau` test.
    pub relative: Option<RelativeTest>,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            border: BorderPolicy::MarkOccluded,
            relative: None,
        }
    }
}

impl ConsistencyConfig {
    pub fn new(tau: f32) -> Result<Self> {
        let cfg = Self {
            tau,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param(alloc::format!(
                "consistency threshold tau must be > 0, got {}",
                self.tau
            )));
        }
        if let Some(r) = self.relative {
            if !(r.alpha >= 0.0 && r.beta >= 0.0 && r.alpha.is_finite() && r.beta.is_finite()) {
                return Err(Error::param("relative test needs finite alpha, beta >= 0"));
            }
        }
        Ok(())
    }
}

/// Per-pixel magnitude of the forward-backward residual, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ResidualField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct RoundTrip {
    dx: f32,
    dy: f32,
    fwd_sq: f32,
    bwd_sq: f32,
    lost: bool,
}

fn round_trips(fwd: &FlowField, bwd: &FlowField, border: BorderPolicy) -> Result<Vec<RoundTrip>> {
    let (h, w) = (fwd.height(), fwd.width());
    bwd.expect_dims(h, w, "consistency check")?;
    let (bdx, bdy) = (bwd.dx(), bwd.dy());
    let mut out = vec![RoundTrip::default(); h * w];
    for_each_chunk(&mut out, w, |y, row| {
        for (x, rt) in row.iter_mut().enumerate() {
            let (fx, fy) = fwd.at(y, x);
            let px = x as f32 + fx;
            let py = y as f32 + fy;
            let inside = px >= 0.0 && py >= 0.0 && px <= (w - 1) as f32 && py <= (h - 1) as f32;
            let taps = Taps::new(h, w, px, py);
            if !taps.is_valid() || (border == BorderPolicy::MarkOccluded && !inside) {
                rt.lost = true;
                continue;
            }
            let (bx, by) = (taps.apply(bdx), taps.apply(bdy));
            *rt = RoundTrip {
                dx: fx + bx,
                dy: fy + by,
                fwd_sq: fx * fx + fy * fy,
                bwd_sq: bx * bx + by * by,
                lost: false,
            };
        }
    });
    Ok(out)
}

/// `|Flow^{t→s}(x) + Flow^{s→t}(x + Flow^{t→s}(x))|` for every pixel `x` of
/// frame `t`, with the backward flow sampled bilinearly. Pixels whose round
/// trip is lost under `border` get [`RESIDUAL_SENTINEL`].
pub fn consistency_residual(
    fwd: &FlowField,
    bwd: &FlowField,
    border: BorderPolicy,
) -> Result<ResidualField> {
    let data = round_trips(fwd, bwd, border)?
        .into_iter()
        .map(|rt| {
            if rt.lost {
                RESIDUAL_SENTINEL
            } else {
                libm::sqrtf(rt.dx * rt.dx + rt.dy * rt.dy)
            }
        })
        .collect();
    Ok(ResidualField {
        height: fwd.height(),
        width: fwd.width(),
        data,
    })
}

/// 1 where the round trip fails the consistency test, 0 elsewhere.
pub fn occlusion_mask(
    fwd: &FlowField,
    bwd: &FlowField,
    cfg: &ConsistencyConfig,
) -> Result<OcclusionMask> {
    cfg.validate()?;
    let trips = round_trips(fwd, bwd, cfg.border)?;
    let occluded: Vec<bool> = trips
        .iter()
        .map(|rt| {
            if rt.lost {
                return true;
            }
            let sq = rt.dx * rt.dx + rt.dy * rt.dy;
            match cfg.relative {
                Some(r) => sq > r.alpha * (rt.fwd_sq + rt.bwd_sq) + r.beta,
                None => libm::sqrtf(sq) > cfg.tau,
            }
        })
        .collect();
    OcclusionMask::from_bools(fwd.height(), fwd.width(), &occluded)
}

/// Pointwise union of masks.
pub fn accumulate_masks(masks: &[OcclusionMask]) -> Result<OcclusionMask> {
    let first = masks.first().ok_or(Error::Empty("mask list"))?;
    let (h, w) = (first.height(), first.width());
    let mut acc = first.to_bools();
    for m in &masks[1..] {
        if m.height() != h || m.width() != w {
            return Err(Error::shape(alloc::format!(
                "mask {}x{} vs {h}x{w}",
                m.height(),
                m.width()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a |= v != 0.0;
        }
    }
    OcclusionMask::from_bools(h, w, &acc)
}
