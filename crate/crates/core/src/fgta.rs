//! Flow-guided temporal aggregation.
//!
//! History features are warped onto the current frame, weighted per pixel by
//! cosine similarity to the current features, softmax-normalised across
//! frames and summed. The current features are then refined with
//! neighbourhood cross-attention over the warped history, with occluded keys
//! excluded.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::flow::{accumulate_masks, occlusion_mask, warp, ConsistencyConfig};
use crate::grids::{FeatureMap, FlowField, OcclusionMask};
use crate::par::for_each_chunk;

/// Per-frame, per-pixel weights laid out `(frame, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl WeightMap {
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f32>]) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::Empty("weight planes"));
        }
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for p in planes {
            if p.len() != height * width {
                return Err(Error::shape(format!(
                    "weight plane of {} values, expected {}",
                    p.len(),
                    height * width
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("weight plane"));
            }
            data.extend_from_slice(p);
        }
        Ok(Self {
            frames: planes.len(),
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self, frame: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[frame * n..(frame + 1) * n]
    }

    pub fn at(&self, frame: usize, y: usize, x: usize) -> f32 {
        self.data[(frame * self.height + y) * self.width + x]
    }
}

/// Cosine similarity of the channel vectors at every pixel. A zero vector on
/// either side gives 0.
pub fn cosine_weight(warped: &FeatureMap, reference: &FeatureMap) -> Result<Vec<f32>> {
    warped.expect_same_shape(reference, "cosine weight")?;
    let n = warped.pixels();
    let mut dot = vec![0.0f64; n];
    let mut na = vec![0.0f64; n];
    let mut nb = vec![0.0f64; n];
    for c in 0..warped.channels() {
        let (a, b) = (warped.plane(c), reference.plane(c));
        for i in 0..n {
            let (x, y) = (f64::from(a[i]), f64::from(b[i]));
            dot[i] += x * y;
            na[i] += x * x;
            nb[i] += y * y;
        }
    }
    Ok((0..n)
        .map(|i| {
            let denom = libm::sqrt(na[i]) * libm::sqrt(nb[i]);
            if denom == 0.0 {
                0.0
            } else {
                (dot[i] / denom).clamp(-1.0, 1.0) as f32
            }
        })
        .collect())
}

/// Softmax across frames at every pixel.
pub fn normalize_weights(raw: &WeightMap) -> WeightMap {
    let n = raw.height * raw.width;
    let mut data = vec![0.0f32; raw.data.len()];
    for i in 0..n {
        let max = (0..raw.frames)
            .map(|f| raw.data[f * n + i])
            .fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for f in 0..raw.frames {
            let e = libm::exp(f64::from(raw.data[f * n + i] - max));
            data[f * n + i] = e as f32;
            sum += e;
        }
        for f in 0..raw.frames {
            data[f * n + i] = (f64::from(data[f * n + i]) / sum) as f32;
        }
    }
    WeightMap {
        frames: raw.frames,
        height: raw.height,
        width: raw.width,
        data,
    }
}

/// `out(P) = Σ_i w_i(P) · frames[i](P)`.
pub fn aggregate(frames: &[&FeatureMap], weights: &WeightMap) -> Result<FeatureMap> {
    let first = frames.first().ok_or(Error::Empty("frame list"))?;
    if frames.len() != weights.frames {
        return Err(Error::shape(format!(
            "{} frames but {} weight planes",
            frames.len(),
            weights.frames
        )));
    }
    if weights.height != first.height() || weights.width != first.width() {
        return Err(Error::shape("weight map does not match frame size"));
    }
    for f in &frames[1..] {
        f.expect_same_shape(first, "aggregate")?;
    }
    let n = first.pixels();
    let mut out = vec![0.0f32; first.channels() * n];
    for_each_chunk(&mut out, n, |c, plane| {
        for (i, frame) in frames.iter().enumerate() {
            let w = weights.plane(i);
            let src = frame.plane(c);
            for p in 0..n {
                plane[p] += w[p] * src[p];
            }
        }
    });
    Ok(FeatureMap::from_parts_unchecked(
        first.channels(),
        first.height(),
        first.width(),
        out,
    ))
}

/// Projection weights for neighbourhood cross-attention.
///
/// Each matrix is `C×C`, row-major, applied as `W · v`. Rows
/// `h·d..(h+1)·d` of the query, key and value projections form head `h`,
/// where `d = C / heads`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionParams {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub scale: f32,
    pub query: Vec<f32>,
    pub key: Vec<f32>,
    pub value: Vec<f32>,
    pub output: Vec<f32>,
}

pub const DEFAULT_HEADS: usize = 8;
pub const DEFAULT_WINDOW: usize = 7;

fn identity_matrix(c: usize) -> Vec<f32> {
    let mut m = vec![0.0; c * c];
    for i in 0..c {
        m[i * c + i] = 1.0;
    }
    m
}

impl AttentionParams {
    /// Identity projections with the default `1/sqrt(head_dim)` scale.
    pub fn identity(channels: usize, heads: usize, window: usize) -> Result<Self> {
        let p = Self {
            channels,
            heads,
            window,
            scale: default_scale(channels, heads),
            query: identity_matrix(channels),
            key: identity_matrix(channels),
            value: identity_matrix(channels),
            output: identity_matrix(channels),
        };
        p.validate()?;
        Ok(p)
    }

    /// Gaussian projections with standard deviation `1/sqrt(C)`.
    pub fn seeded(channels: usize, heads: usize, window: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::param("attention needs at least one channel"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 1.0 / libm::sqrtf(channels as f32))
            .map_err(|e| Error::param(format!("{e}")))?;
        let mut mat = || -> Vec<f32> {
            (0..channels * channels)
                .map(|_| normal.sample(&mut rng))
                .collect()
        };
        let (query, key, value, output) = (mat(), mat(), mat(), mat());
        let p = Self {
            channels,
            heads,
            window,
            scale: default_scale(channels, heads),
            query,
            key,
            value,
            output,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::param(format!(
                "attention window must be odd, got {}",
                self.window
            )));
        }
        if self.heads == 0 || self.channels == 0 || self.channels % self.heads != 0 {
            return Err(Error::param(format!(
                "{} heads do not divide {} channels",
                self.heads, self.channels
            )));
        }
        if !self.scale.is_finite() {
            return Err(Error::NonFinite("attention scale"));
        }
        let cc = self.channels * self.channels;
        for (name, m) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
        ] {
            if m.len() != cc {
                return Err(Error::shape(format!(
                    "{name} projection has {} entries, expected {cc}",
                    m.len()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("attention projection"));
            }
        }
        Ok(())
    }
}

fn default_scale(channels: usize, heads: usize) -> f32 {
    if heads == 0 || channels < heads {
        return 1.0;
    }
    1.0 / libm::sqrtf((channels / heads) as f32)
}

/// First index and length of the neighbourhood along one axis. The window is
/// shifted inward at the borders so it always covers `min(window, len)` cells.
pub fn window_range(center: usize, len: usize, window: usize) -> (usize, usize) {
    if window >= len {
        return (0, len);
    }
    let r = window / 2;
    let start = center.saturating_sub(r).min(len - window);
    (start, window)
}

/// Pixel-major projection of every pixel of `map`: `out[p*C..(p+1)*C] = W·map(p)`.
fn project(map: &FeatureMap, weights: &[f32]) -> Vec<f32> {
    let c = map.channels();
    let n = map.pixels();
    let mut out = vec![0.0f32; n * c];
    for_each_chunk(&mut out, c, |p, dst| {
        for (r, d) in dst.iter_mut().enumerate() {
            let row = &weights[r * c..(r + 1) * c];
            let mut acc = 0.0f32;
            for (k, w) in row.iter().enumerate() {
                acc += w * map.data()[k * n + p];
            }
            *d = acc;
        }
    });
    out
}

/// A key position inside some pixel's neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyPos {
    pub frame: usize,
    pub y: usize,
    pub x: usize,
}

/// Attention distribution of one query pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelAttention {
    /// All window positions, masked or not, frame-major then row-major.
    pub keys: Vec<KeyPos>,
    pub masked: Vec<bool>,
    /// `weights[h][k]` is head `h`'s attention on `keys[k]`; exactly zero for
    /// masked keys. Empty when every key is masked.
    pub weights: Vec<Vec<f32>>,
}

/// Precomputed projections for repeated per-pixel attention queries.
pub struct CrossAttention<'a> {
    params: &'a AttentionParams,
    query: &'a FeatureMap,
    occl: &'a OcclusionMask,
    q: Vec<f32>,
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl<'a> CrossAttention<'a> {
    pub fn new(
        query: &'a FeatureMap,
        kv: &[&FeatureMap],
        occl: &'a OcclusionMask,
        params: &'a AttentionParams,
    ) -> Result<Self> {
        params.validate()?;
        if kv.is_empty() {
            return Err(Error::Empty("key/value frames"));
        }
        for f in kv {
            f.expect_same_shape(query, "cross attention")?;
        }
        if query.channels() != params.channels {
            return Err(Error::shape(format!(
                "attention configured for {} channels, features have {}",
                params.channels,
                query.channels()
            )));
        }
        if occl.height() != query.height() || occl.width() != query.width() {
            return Err(Error::shape("occlusion mask does not match features"));
        }
        Ok(Self {
            params,
            query,
            occl,
            q: project(query, &params.query),
            k: kv.iter().map(|f| project(f, &params.key)).collect(),
            v: kv.iter().map(|f| project(f, &params.value)).collect(),
        })
    }

    fn keys_at(&self, y: usize, x: usize) -> (Vec<KeyPos>, Vec<bool>) {
        let (h, w) = (self.query.height(), self.query.width());
        let (y0, ny) = window_range(y, h, self.params.window);
        let (x0, nx) = window_range(x, w, self.params.window);
        let mut keys = Vec::with_capacity(self.k.len() * ny * nx);
        let mut masked = Vec::with_capacity(keys.capacity());
        for frame in 0..self.k.len() {
            for ky in y0..y0 + ny {
                for kx in x0..x0 + nx {
                    keys.push(KeyPos { frame, y: ky, x: kx });
                    masked.push(self.occl.is_occluded(ky, kx));
                }
            }
        }
        (keys, masked)
    }

    /// Attention weights of every head at pixel `(y, x)`.
    pub fn attention_at(&self, y: usize, x: usize) -> PixelAttention {
        let (keys, masked) = self.keys_at(y, x);
        let weights = if masked.iter().all(|&m| m) {
            Vec::new()
        } else {
            (0..self.params.heads)
                .map(|h| self.head_weights(y, x, h, &keys, &masked))
                .collect()
        };
        PixelAttention {
            keys,
            masked,
            weights,
        }
    }

    fn head_weights(&self, y: usize, x: usize, head: usize, keys: &[KeyPos], masked: &[bool]) -> Vec<f32> {
        let c = self.params.channels;
        let d = self.params.head_dim();
        let w = self.query.width();
        let p = y * w + x;
        let q = &self.q[p * c + head * d..p * c + (head + 1) * d];
        let mut logits = vec![f32::NEG_INFINITY; keys.len()];
        let mut max = f32::NEG_INFINITY;
        for (i, key) in keys.iter().enumerate() {
            if masked[i] {
                continue;
            }
            let kp = key.y * w + key.x;
            let k = &self.k[key.frame][kp * c + head * d..kp * c + (head + 1) * d];
            let dot: f32 = q.iter().zip(k).map(|(a, b)| a * b).sum();
            logits[i] = dot * self.params.scale;
            max = max.max(logits[i]);
        }
        let mut sum = 0.0f32;
        for (i, l) in logits.iter_mut().enumerate() {
            *l = if masked[i] { 0.0 } else { libm::expf(*l - max) };
            sum += *l;
        }
        for l in &mut logits {
            *l /= sum;
        }
        logits
    }

    /// Refined channel vector at `(y, x)`, written into `out`.
    pub fn output_at(&self, y: usize, x: usize, out: &mut [f32]) {
        let c = self.params.channels;
        let d = self.params.head_dim();
        let w = self.query.width();
        let n = self.query.pixels();
        let p = y * w + x;
        for (ch, o) in out.iter_mut().enumerate() {
            *o = self.query.data()[ch * n + p];
        }
        let att = self.attention_at(y, x);
        if att.weights.is_empty() {
            return;
        }
        let mut attended = vec![0.0f32; c];
        for (h, weights) in att.weights.iter().enumerate() {
            for (key, &a) in att.keys.iter().zip(weights) {
                if a == 0.0 {
                    continue;
                }
                let kp = key.y * w + key.x;
                let v = &self.v[key.frame][kp * c + h * d..kp * c + (h + 1) * d];
                for (dst, val) in attended[h * d..(h + 1) * d].iter_mut().zip(v) {
                    *dst += a * val;
                }
            }
        }
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.params.output[r * c..(r + 1) * c];
            let proj: f32 = row.iter().zip(&attended).map(|(a, b)| a * b).sum();
            *o += proj;
        }
    }

    pub fn run(&self) -> FeatureMap {
        let (c, h, w) = (self.query.channels(), self.query.height(), self.query.width());
        let mut pix = vec![0.0f32; h * w * c];
        for_each_chunk(&mut pix, w * c, |y, row| {
            for x in 0..w {
                self.output_at(y, x, &mut row[x * c..(x + 1) * c]);
            }
        });
        let n = h * w;
        let mut out = vec![0.0f32; c * n];
        for p in 0..n {
            for ch in 0..c {
                out[ch * n + p] = pix[p * c + ch];
            }
        }
        FeatureMap::from_parts_unchecked(c, h, w, out)
    }
}

/// Masked neighbourhood cross-attention with a single key/value map.
///
/// Output is `query + W_o · concat_h(attention_h)`; keys at occluded
/// positions are excluded, and a pixel whose whole neighbourhood is occluded
/// keeps its query value.
pub fn neighborhood_cross_attention(
    query: &FeatureMap,
    kv: &FeatureMap,
    occl: &OcclusionMask,
    params: &AttentionParams,
) -> Result<FeatureMap> {
    neighborhood_cross_attention_multi(query, &[kv], occl, params)
}

/// As [`neighborhood_cross_attention`], attending jointly over the
/// neighbourhoods of several key/value maps.
pub fn neighborhood_cross_attention_multi(
    query: &FeatureMap,
    kv: &[&FeatureMap],
    occl: &OcclusionMask,
    params: &AttentionParams,
) -> Result<FeatureMap> {
    Ok(CrossAttention::new(query, kv, occl, params)?.run())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgtaOutput {
    pub aggregated: FeatureMap,
    pub refined: FeatureMap,
    /// Union of the per-frame masks (or the override).
    pub mask: OcclusionMask,
    pub frame_masks: Vec<OcclusionMask>,
    pub warped: Vec<FeatureMap>,
    /// Normalised weights; frame 0 is the current frame.
    pub weights: WeightMap,
}

/// Flow pair for one history frame: `fwd = Flow^{t→t-i}` on frame `t`,
/// `bwd = Flow^{t-i→t}` on frame `t-i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    pub fwd: FlowField,
    pub bwd: FlowField,
}

pub fn fgta_forward(
    current: &FeatureMap,
    history: &[FeatureMap],
    flows: &[FlowPair],
    cfg: &ConsistencyConfig,
    params: &AttentionParams,
) -> Result<FgtaOutput> {
    fgta_forward_with(current, history, flows, cfg, params, None)
}

/// [`fgta_forward`] with an optional mask that replaces the accumulated
/// consistency mask for attention and output.
pub fn fgta_forward_with(
    current: &FeatureMap,
    history: &[FeatureMap],
    flows: &[FlowPair],
    cfg: &ConsistencyConfig,
    params: &AttentionParams,
    mask_override: Option<&OcclusionMask>,
) -> Result<FgtaOutput> {
    if history.is_empty() {
        return Err(Error::Empty("history frames"));
    }
    if history.len() != flows.len() {
        return Err(Error::shape(format!(
            "{} history frames but {} flow pairs",
            history.len(),
            flows.len()
        )));
    }
    let (h, w) = (current.height(), current.width());

    let mut warped = Vec::with_capacity(history.len());
    let mut frame_masks = Vec::with_capacity(history.len());
    let mut raw = Vec::with_capacity(history.len() + 1);
    raw.push(cosine_weight(current, current)?);
    for (feat, pair) in history.iter().zip(flows) {
        feat.expect_same_shape(current, "history frame")?;
        let wf = warp(feat, &pair.fwd)?.features;
        raw.push(cosine_weight(&wf, current)?);
        frame_masks.push(occlusion_mask(&pair.fwd, &pair.bwd, cfg)?);
        warped.push(wf);
    }
    let weights = normalize_weights(&WeightMap::from_planes(h, w, &raw)?);

    let mut frames: Vec<&FeatureMap> = Vec::with_capacity(warped.len() + 1);
    frames.push(current);
    frames.extend(warped.iter());
    let aggregated = aggregate(&frames, &weights)?;

    let mask = match mask_override {
        Some(m) => {
            if m.height() != h || m.width() != w {
                return Err(Error::shape("mask override does not match features"));
            }
            m.clone()
        }
        None => accumulate_masks(&frame_masks)?,
    };
    let kv: Vec<&FeatureMap> = warped.iter().collect();
    let refined = neighborhood_cross_attention_multi(current, &kv, &mask, params)?;

    Ok(FgtaOutput {
        aggregated,
        refined,
        mask,
        frame_masks,
        warped,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_map(&mut rng, 4, 5, 5);
        let neg = FeatureMap::new(4, 5, 5, a.data().iter().map(|v| -v).collect()).unwrap();
        for v in cosine_weight(&a, &a).unwrap() {
            assert!((v - 1.0).abs() < 1e-6);
        }
        for v in cosine_weight(&a, &neg).unwrap() {
            assert!((v + 1.0).abs() < 1e-6);
        }
        let z = FeatureMap::zeros(4, 5, 5);
        assert!(cosine_weight(&a, &z).unwrap().iter().all(|&v| v == 0.0));
        assert!(cosine_weight(&a, &FeatureMap::zeros(3, 5, 5)).is_err());
    }

    #[test]
    fn cosine_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_map(&mut rng, 4, 8, 8);
        let b = random_map(&mut rng, 4, 8, 8);
        let got = cosine_weight(&a, &b).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let (pa, pb) = (a.pixel(y, x), b.pixel(y, x));
                let dot: f32 = pa.iter().zip(&pb).map(|(p, q)| p * q).sum();
                let na: f32 = pa.iter().map(|v| v * v).sum::<f32>().sqrt();
                let nb: f32 = pb.iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((got[y * 8 + x] - dot / (na * nb)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let one = WeightMap::from_planes(2, 2, &[vec![0.3, -4.0, 9.0, 0.0]]).unwrap();
        assert!(normalize_weights(&one).plane(0).iter().all(|&v| v == 1.0));
        let eq = WeightMap::from_planes(1, 1, &[vec![0.2], vec![0.2]]).unwrap();
        let n = normalize_weights(&eq);
        assert_eq!((n.at(0, 0, 0), n.at(1, 0, 0)), (0.5, 0.5));
        // e / (e + 1) and 1 / (e + 1)
        let raw = WeightMap::from_planes(1, 1, &[vec![1.0], vec![0.0]]).unwrap();
        let n = normalize_weights(&raw);
        assert!((n.at(0, 0, 0) - 0.731_058_6).abs() < 1e-6);
        assert!((n.at(1, 0, 0) - 0.268_941_4).abs() < 1e-6);
    }

    #[test]
    fn aggregate_identical_frames_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = random_map(&mut rng, 3, 4, 6);
        let raw: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..24).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let w = normalize_weights(&WeightMap::from_planes(4, 6, &raw).unwrap());
        let out = aggregate(&[&f, &f, &f], &w).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        let single = WeightMap::from_planes(4, 6, &[vec![1.0; 24]]).unwrap();
        assert_eq!(aggregate(&[&f], &single).unwrap(), f);
        assert!(aggregate(&[&f, &f], &single).is_err());
    }

    #[test]
    fn aggregate_matches_weighted_sum_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let frames: Vec<FeatureMap> = (0..3).map(|_| random_map(&mut rng, 2, 5, 5)).collect();
        let raw: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..25).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let w = normalize_weights(&WeightMap::from_planes(5, 5, &raw).unwrap());
        let refs: Vec<&FeatureMap> = frames.iter().collect();
        let out = aggregate(&refs, &w).unwrap();
        for c in 0..2 {
            for y in 0..5 {
                for x in 0..5 {
                    let want: f32 = (0..3).map(|i| w.at(i, y, x) * frames[i].get(c, y, x)).sum();
                    assert!((out.get(c, y, x) - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(AttentionParams::identity(8, 8, 7).is_ok());
        assert!(AttentionParams::identity(8, 3, 7).is_err());
        assert!(AttentionParams::identity(8, 2, 4).is_err());
        let mut p = AttentionParams::identity(4, 2, 3).unwrap();
        p.key[0] = f32::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn window_range_shifts_at_borders() {
        assert_eq!(window_range(0, 10, 7), (0, 7));
        assert_eq!(window_range(5, 10, 7), (2, 7));
        assert_eq!(window_range(9, 10, 7), (3, 7));
        assert_eq!(window_range(1, 4, 7), (0, 4));
        assert_eq!(window_range(3, 10, 1), (3, 1));
    }

    #[test]
    fn fully_masked_keeps_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let q = random_map(&mut rng, 4, 6, 6);
        let kv = random_map(&mut rng, 4, 6, 6);
        let p = AttentionParams::seeded(4, 2, 3, 1).unwrap();
        let out = neighborhood_cross_attention(&q, &kv, &OcclusionMask::ones(6, 6), &p).unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn window_one_passes_value_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let q = random_map(&mut rng, 4, 5, 5);
        let kv = random_map(&mut rng, 4, 5, 5);
        let p = AttentionParams::identity(4, 2, 1).unwrap();
        let out = neighborhood_cross_attention(&q, &kv, &OcclusionMask::zeros(5, 5), &p).unwrap();
        for (i, v) in out.data().iter().enumerate() {
            assert!((v - (q.data()[i] + kv.data()[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn nca_rejects_bad_params() {
        let q = FeatureMap::zeros(4, 3, 3);
        let mut p = AttentionParams::identity(4, 2, 3).unwrap();
        p.window = 2;
        assert!(neighborhood_cross_attention(&q, &q, &OcclusionMask::zeros(3, 3), &p).is_err());
        p.window = 3;
        p.heads = 3;
        assert!(neighborhood_cross_attention(&q, &q, &OcclusionMask::zeros(3, 3), &p).is_err());
    }

    #[test]
    fn attention_rows_sum_to_one_and_skip_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let q = random_map(&mut rng, 4, 7, 7);
        let kv = random_map(&mut rng, 4, 7, 7);
        let bits: Vec<bool> = (0..49).map(|_| rng.random_bool(0.4)).collect();
        let m = OcclusionMask::from_bools(7, 7, &bits).unwrap();
        let p = AttentionParams::seeded(4, 2, 3, 3).unwrap();
        let kvs = [&kv];
        let att = CrossAttention::new(&q, &kvs, &m, &p).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let a = att.attention_at(y, x);
                for row in &a.weights {
                    let s: f32 = row.iter().sum();
                    assert!((s - 1.0).abs() < 1e-5);
                    for (wt, &masked) in row.iter().zip(&a.masked) {
                        if masked {
                            assert_eq!(*wt, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fgta_degenerate_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cur = random_map(&mut rng, 8, 6, 6);
        let pair = FlowPair {
            fwd: FlowField::zeros(6, 6),
            bwd: FlowField::zeros(6, 6),
        };
        let p = AttentionParams::seeded(8, 8, 7, 4).unwrap();
        let cfg = ConsistencyConfig::default();
        let out = fgta_forward(&cur, &[cur.clone()], &[pair.clone()], &cfg, &p).unwrap();
        assert_eq!(out.mask.occluded_count(), 0);
        for (a, b) in out.aggregated.data().iter().zip(cur.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        let again = fgta_forward(&cur, &[cur.clone()], &[pair], &cfg, &p).unwrap();
        assert_eq!(out.refined, again.refined);
    }

    #[test]
    fn fgta_count_mismatch() {
        let cur = FeatureMap::zeros(8, 4, 4);
        let p = AttentionParams::identity(8, 8, 3).unwrap();
        let cfg = ConsistencyConfig::default();
        assert!(fgta_forward(&cur, &[], &[], &cfg, &p).is_err());
        assert!(fgta_forward(&cur, &[cur.clone()], &[], &cfg, &p).is_err());
    }
}
