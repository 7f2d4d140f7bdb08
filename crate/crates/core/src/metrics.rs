//! Completion (occupancy) IoU and semantic mIoU from a confusion matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grids::SemanticVoxelGrid;

/// SemanticKITTI class names by contiguous id.
pub const SEMANTIC_KITTI_CLASSES: [&str; 20] = [
    "empty",
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];

/// Car, bicycle, motorcycle, truck, other-vehicle, person, bicyclist.
pub const SEMANTIC_KITTI_DYNAMIC: [usize; 7] = [1, 2, 3, 4, 5, 6, 7];

/// Distances at which completion is commonly scored, in meters.
pub const STANDARD_RANGES: [f32; 3] = [12.8, 25.6, 51.2];

/// Counts indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    #[inline]
    pub fn add(&mut self, gt: usize, pred: usize) {
        self.counts[gt * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, gt: usize) -> u64 {
        self.counts[gt * self.classes..(gt + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, pred)).sum()
    }

    /// Adds another matrix's counts; exact, so partial matrices can be merged.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion matrices differ in class count"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Counts every voxel that is valid in `gt`.
pub fn confusion(pred: &SemanticVoxelGrid, gt: &SemanticVoxelGrid) -> Result<ConfusionMatrix> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let k = gt.num_classes();
    if pred.num_classes() > k {
        return Err(Error::shape(format!(
            "prediction has {} classes, ground truth {k}",
            pred.num_classes()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for ((&g, &p), &ok) in gt.labels().iter().zip(pred.labels()).zip(gt.valid()) {
        if ok {
            cm.add(g as usize, p as usize);
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Occupied-vs-empty counts: (true positive, false positive, false negative).
fn occupancy_counts(cm: &ConfusionMatrix) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for g in 0..cm.classes {
        for p in 0..cm.classes {
            let n = cm.get(g, p);
            match (g != 0, p != 0) {
                (true, true) => tp += n,
                (false, true) => fp += n,
                (true, false) => fn_ += n,
                _ => {}
            }
        }
    }
    (tp, fp, fn_)
}

/// Scene-completion IoU, treating every non-zero class as occupied.
/// `None` when neither side has an occupied voxel.
pub fn geometric_iou(cm: &ConfusionMatrix) -> Option<f64> {
    let (tp, fp, fn_) = occupancy_counts(cm);
    ratio(tp, tp + fp + fn_)
}

/// Occupancy precision and recall.
pub fn geometric_precision_recall(cm: &ConfusionMatrix) -> PrecisionRecall {
    let (tp, fp, fn_) = occupancy_counts(cm);
    PrecisionRecall {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    /// IoU for classes `1..K`; `None` when a class appears in neither
    /// prediction nor ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes that have an IoU.
    pub mean: Option<f64>,
}

pub fn class_iou(cm: &ConfusionMatrix, c: usize) -> Option<f64> {
    let tp = cm.get(c, c);
    ratio(tp, cm.row_sum(c) + cm.col_sum(c) - tp)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn miou(cm: &ConfusionMatrix) -> MiouReport {
    let per_class: Vec<Option<f64>> = (1..cm.classes).map(|c| class_iou(cm, c)).collect();
    let mean = mean_of(per_class.iter().copied());
    MiouReport { per_class, mean }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    /// `None` when nothing was predicted as the class.
    pub precision: Option<f64>,
    /// `None` when the class is absent from the ground truth.
    pub recall: Option<f64>,
}

/// Per-class precision and recall for classes `0..K`.
pub fn precision_recall(cm: &ConfusionMatrix) -> Vec<PrecisionRecall> {
    (0..cm.classes)
        .map(|c| {
            let tp = cm.get(c, c);
            PrecisionRecall {
                precision: ratio(tp, cm.col_sum(c)),
                recall: ratio(tp, cm.row_sum(c)),
            }
        })
        .collect()
}

/// Marks every voxel whose far face along the forward (X) axis lies beyond
/// `range_m` as invalid. Labels and dims are unchanged.
pub fn range_crop(grid: &SemanticVoxelGrid, range_m: f32) -> Result<SemanticVoxelGrid> {
    if !(range_m > 0.0 && range_m.is_finite()) {
        return Err(Error::param(format!("range must be positive, got {range_m}")));
    }
    let spec = grid.spec();
    let vs = f64::from(spec.voxel_size);
    let limit = f64::from(range_m) + 1e-6 * vs;
    let keep_x: Vec<bool> = (0..spec.dims[0])
        .map(|x| f64::from(spec.origin[0]) + (x as f64 + 1.0) * vs <= limit)
        .collect();
    let slab = spec.dims[1] * spec.dims[2];
    let valid = grid
        .valid()
        .iter()
        .enumerate()
        .map(|(i, &v)| v && keep_x[i / slab])
        .collect();
    grid.with_valid(valid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMiou {
    pub dynamic: Option<f64>,
    pub static_: Option<f64>,
}

/// mIoU over the given dynamic classes and over the remaining non-empty
/// classes.
pub fn class_split_miou(cm: &ConfusionMatrix, dynamic_classes: &[usize]) -> Result<SplitMiou> {
    let mut is_dynamic = vec![false; cm.classes];
    for &c in dynamic_classes {
        if c == 0 || c >= cm.classes {
            return Err(Error::param(format!(
                "dynamic class {c} outside 1..{}",
                cm.classes
            )));
        }
        if is_dynamic[c] {
            return Err(Error::param(format!("dynamic class {c} listed twice")));
        }
        is_dynamic[c] = true;
    }
    let dynamic = mean_of((1..cm.classes).filter(|&c| is_dynamic[c]).map(|c| class_iou(cm, c)));
    let static_ = mean_of((1..cm.classes).filter(|&c| !is_dynamic[c]).map(|c| class_iou(cm, c)));
    Ok(SplitMiou { dynamic, static_ })
}
