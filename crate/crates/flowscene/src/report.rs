//! The JSON report written by `flowscene eval`.

use std::fmt::Write as _;

use flowscene_core::metrics::{
    class_iou, class_split_miou, confusion, geometric_iou, geometric_precision_recall, miou,
    precision_recall, range_crop, ConfusionMatrix, SEMANTIC_KITTI_CLASSES,
};
use flowscene_core::SemanticVoxelGrid;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub range_m: f32,
    pub evaluated_voxels: u64,
    pub iou: Option<f64>,
    pub miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub dynamic_classes: Vec<usize>,
    pub dynamic: Option<f64>,
    #[serde(rename = "static")]
    pub static_: Option<f64>,
}

/// Scores of one prediction against one ground-truth volume. Scores are
/// `null` when undefined (empty denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_classes: usize,
    pub evaluated_voxels: u64,
    /// Occupancy (scene completion) IoU, precision, recall.
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Mean IoU over the non-empty classes that have an IoU.
    pub miou: Option<f64>,
    pub per_class: Vec<ClassReport>,
    pub ranges: Vec<RangeReport>,
    pub splits: Option<SplitReport>,
}

fn class_name(k: usize, c: usize) -> Option<String> {
    (k == SEMANTIC_KITTI_CLASSES.len()).then(|| SEMANTIC_KITTI_CLASSES[c].to_string())
}

fn summary(cm: &ConfusionMatrix) -> (Option<f64>, Option<f64>) {
    (geometric_iou(cm), miou(cm).mean)
}

/// `ranges` crop the ground truth along the forward axis; `dynamic` splits
/// the mIoU into dynamic and static classes.
pub fn evaluate(
    pred: &SemanticVoxelGrid,
    gt: &SemanticVoxelGrid,
    ranges: &[f32],
    dynamic: Option<&[usize]>,
) -> Result<EvalReport> {
    let cm = confusion(pred, gt)?;
    let k = cm.classes();
    let pr = precision_recall(&cm);
    let per_class = (1..k)
        .map(|c| ClassReport {
            class: c,
            name: class_name(k, c),
            iou: class_iou(&cm, c),
            precision: pr[c].precision,
            recall: pr[c].recall,
        })
        .collect();
    let ranges = ranges
        .iter()
        .map(|&r| {
            let cropped = confusion(pred, &range_crop(gt, r)?)?;
            let (iou, miou) = summary(&cropped);
            Ok(RangeReport {
                range_m: r,
                evaluated_voxels: cropped.total(),
                iou,
                miou,
            })
        })
        .collect::<Result<_>>()?;
    let splits = dynamic
        .map(|d| -> Result<_> {
            let s = class_split_miou(&cm, d)?;
            Ok(SplitReport {
                dynamic_classes: d.to_vec(),
                dynamic: s.dynamic,
                static_: s.static_,
            })
        })
        .transpose()?;
    let geo = geometric_precision_recall(&cm);
    let (iou, miou) = summary(&cm);
    Ok(EvalReport {
        num_classes: k,
        evaluated_voxels: cm.total(),
        iou,
        precision: geo.precision,
        recall: geo.recall,
        miou,
        per_class,
        ranges,
        splits,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Human-readable table for the terminal.
pub fn format_summary(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "evaluated voxels: {}", r.evaluated_voxels);
    let _ = writeln!(
        s,
        "IoU {}  precision {}  recall {}  mIoU {}",
        pct(r.iou),
        pct(r.precision),
        pct(r.recall),
        pct(r.miou)
    );
    for c in &r.per_class {
        let name = c.name.clone().unwrap_or_else(|| format!("class {}", c.class));
        let _ = writeln!(s, "  {name:<16} IoU {}", pct(c.iou));
    }
    for g in &r.ranges {
        let _ = writeln!(s, "range {:>5} m: IoU {}  mIoU {}", g.range_m, pct(g.iou), pct(g.miou));
    }
    if let Some(sp) = &r.splits {
        let _ = writeln!(s, "dynamic mIoU {}  static mIoU {}", pct(sp.dynamic), pct(sp.static_));
    }
    s
}
