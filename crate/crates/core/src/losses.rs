//! Forward values of the training objective: scene-class affinity losses,
//! class-weighted cross-entropy, depth binary cross-entropy and their
//! weighted sum. No gradients.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grids::{GridSpec, SemanticVoxelGrid};
use crate::lift::DepthDistribution;

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

fn neg_log(x: f64) -> f64 {
    -libm::log(x.max(LOG_EPS))
}

/// Per-voxel class probabilities, laid out `(k, x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    classes: usize,
    spec: GridSpec,
    data: Vec<f32>,
}

impl ProbabilityVolume {
    /// Checks that every voxel holds a distribution (non-negative, summing
    /// to 1 within 1e-4).
    pub fn new(classes: usize, spec: GridSpec, data: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        let n = spec.num_voxels();
        if classes == 0 || data.len() != classes * n {
            return Err(Error::shape(format!(
                "{} probabilities for {classes} classes over {n} voxels",
                data.len()
            )));
        }
        for i in 0..n {
            let mut s = 0.0f64;
            for k in 0..classes {
                let p = data[k * n + i];
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::param(format!("probability {p} at voxel {i}")));
                }
                s += f64::from(p);
            }
            if (s - 1.0).abs() > 1e-4 {
                return Err(Error::param(format!("voxel {i} probabilities sum to {s}")));
            }
        }
        Ok(Self { classes, spec, data })
    }

    pub fn uniform(classes: usize, spec: GridSpec) -> Result<Self> {
        let n = spec.num_voxels();
        Self::new(classes, spec, alloc::vec![1.0 / classes as f32; classes * n])
    }

    /// Puts all mass on each voxel's label.
    pub fn one_hot(labels: &SemanticVoxelGrid) -> Self {
        let n = labels.spec().num_voxels();
        let k = labels.num_classes();
        let mut data = alloc::vec![0.0; k * n];
        for (i, &l) in labels.labels().iter().enumerate() {
            data[l as usize * n + i] = 1.0;
        }
        Self {
            classes: k,
            spec: *labels.spec(),
            data,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn prob(&self, class: usize, voxel: usize) -> f32 {
        self.data[class * self.spec.num_voxels() + voxel]
    }

    fn check_against(&self, gt: &SemanticVoxelGrid) -> Result<()> {
        if self.spec.dims != gt.dims() {
            return Err(Error::shape(format!(
                "prediction {:?} vs ground truth {:?}",
                self.spec.dims,
                gt.dims()
            )));
        }
        if self.classes != gt.num_classes() {
            return Err(Error::shape(format!(
                "prediction has {} classes, ground truth {}",
                self.classes,
                gt.num_classes()
            )));
        }
        if gt.valid_count() == 0 {
            return Err(Error::Empty("valid voxels"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalMode {
    /// One term per class present in the ground truth.
    Semantic,
    /// A single occupied-vs-empty term.
    Geometric,
}

/// Sums for one precision/recall/specificity term.
#[derive(Default)]
struct AffinitySums {
    hit: f64,
    predicted: f64,
    actual: f64,
    true_negative: f64,
    negatives: f64,
}

impl AffinitySums {
    fn add(&mut self, p: f64, positive: bool) {
        self.predicted += p;
        if positive {
            self.hit += p;
            self.actual += 1.0;
        } else {
            self.true_negative += 1.0 - p;
            self.negatives += 1.0;
        }
    }

    /// `-log P - log R - log S`, skipping terms with a zero denominator.
    fn loss(&self) -> f64 {
        let mut l = 0.0;
        if self.predicted > 0.0 {
            l += neg_log(self.hit / self.predicted);
        }
        if self.actual > 0.0 {
            l += neg_log(self.hit / self.actual);
        }
        if self.negatives > 0.0 {
            l += neg_log(self.true_negative / self.negatives);
        }
        l
    }
}

/// Scene-class affinity loss over valid voxels.
pub fn scal_loss(pred: &ProbabilityVolume, gt: &SemanticVoxelGrid, mode: ScalMode) -> Result<f64> {
    pred.check_against(gt)?;
    let valid: Vec<usize> = (0..gt.labels().len()).filter(|&i| gt.valid()[i]).collect();
    match mode {
        ScalMode::Semantic => {
            let (mut total, mut present) = (0.0, 0usize);
            for c in 0..pred.classes {
                let mut s = AffinitySums::default();
                for &i in &valid {
                    s.add(f64::from(pred.prob(c, i)), gt.labels()[i] as usize == c);
                }
                // Classes absent from the ground truth are skipped.
                if s.actual == 0.0 {
                    continue;
                }
                total += s.loss();
                present += 1;
            }
            Ok(total / present as f64 + 0.0)
        }
        ScalMode::Geometric => {
            let mut s = AffinitySums::default();
            for &i in &valid {
                let occupied = 1.0 - f64::from(pred.prob(0, i));
                s.add(occupied, gt.labels()[i] != 0);
            }
            Ok(s.loss() + 0.0)
        }
    }
}

/// Mean over valid voxels of `-w[gt] · log p(gt)`.
pub fn weighted_ce(pred: &ProbabilityVolume, gt: &SemanticVoxelGrid, class_weights: &[f32]) -> Result<f64> {
    pred.check_against(gt)?;
    if class_weights.len() != pred.classes {
        return Err(Error::shape(format!(
            "{} class weights for {} classes",
            class_weights.len(),
            pred.classes
        )));
    }
    if class_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::param("class weights must be finite and non-negative"));
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (i, (&l, &ok)) in gt.labels().iter().zip(gt.valid()).enumerate() {
        if ok {
            let l = l as usize;
            sum += f64::from(class_weights[l]) * neg_log(f64::from(pred.prob(l, i)));
            n += 1;
        }
    }
    Ok(sum / n as f64 + 0.0)
}

/// Mean per-bin binary cross-entropy over supervised pixels.
pub fn depth_bce(pred: &DepthDistribution, target: &DepthDistribution, supervised: &[bool]) -> Result<f64> {
    if (pred.bins(), pred.height(), pred.width()) != (target.bins(), target.height(), target.width()) {
        return Err(Error::shape("predicted and target depth differ in shape"));
    }
    let n = pred.height() * pred.width();
    if supervised.len() != n {
        return Err(Error::shape("supervision plane size"));
    }
    let (mut sum, mut count) = (0.0f64, 0usize);
    for p in (0..n).filter(|&p| supervised[p]) {
        for d in 0..pred.bins() {
            let q = f64::from(pred.data()[d * n + p]);
            let t = f64::from(target.data()[d * n + p]);
            sum += t * neg_log(q) + (1.0 - t) * neg_log(1.0 - q);
        }
        count += pred.bins();
    }
    if count == 0 {
        return Err(Error::Empty("supervised depth pixels"));
    }
    Ok(sum / count as f64 + 0.0)
}

/// Balancing coefficients of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub sem: f64,
    pub geo: f64,
    pub ce: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sem: 1.0,
            geo: 1.0,
            ce: 1.0,
            depth: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.sem, self.geo, self.ce, self.depth]
            .iter()
            .all(|w| *w >= 0.0 && w.is_finite())
        {
            Ok(())
        } else {
            Err(Error::param("loss weights must be finite and non-negative"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub sem_scal: f64,
    pub geo_scal: f64,
    pub ce: f64,
    pub depth: f64,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.sem * parts.sem_scal + w.geo * parts.geo_scal + w.ce * parts.ce + w.depth * parts.depth
}
