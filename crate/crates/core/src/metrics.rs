//! Depth, segmentation and reconstruction quality metrics.
//!
//! All reductions run sequentially in input order so repeated runs give
//! identical bits.

use thiserror::Error;

use crate::geometry::{is_valid_depth, Label, LabeledCloud, Raster, UNLABELED};
use crate::spatial::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: prediction is {0}x{1}, ground truth is {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("metrics undefined: {0}")]
    Undefined(String),
    #[error("label {label} at pixel {pixel} is outside 0..{num_classes}")]
    LabelOutOfRange {
        label: Label,
        pixel: usize,
        num_classes: usize,
    },
}

/// Default δ thresholds: 1.25, 1.25², 1.25³.
pub const DEFAULT_DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.5625, 1.953125];

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMetrics {
    pub rel: f64,
    pub log10: f64,
    pub rms: f64,
    /// `(threshold, fraction of pixels with max ratio below it)`.
    pub delta_acc: Vec<(f64, f64)>,
    /// Number of pixels where both rasters are valid.
    pub valid_pixels: usize,
}

/// Mean relative error, mean log10 error, RMS error and δ accuracies over
/// pixels where both prediction and ground truth are positive and finite.
pub fn depth_metrics(
    pred: &Raster<f64>,
    gt: &Raster<f64>,
    thresholds: &[f64],
) -> Result<DepthMetrics, MetricsError> {
    check_shape(pred.width(), pred.height(), gt.width(), gt.height())?;
    let mut count = 0usize;
    let mut rel = 0.0;
    let mut log10 = 0.0;
    let mut sq = 0.0;
    let mut below = vec![0usize; thresholds.len()];
    for (&d, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if !(is_valid_depth(d) && is_valid_depth(g)) {
            continue;
        }
        count += 1;
        let diff = d - g;
        rel += diff.abs() / g;
        log10 += (d.log10() - g.log10()).abs();
        sq += diff * diff;
        let ratio = (g / d).max(d / g);
        for (slot, &t) in below.iter_mut().zip(thresholds) {
            if ratio < t {
                *slot += 1;
            }
        }
    }
    if count == 0 {
        return Err(MetricsError::Undefined(
            "no pixel has valid depth in both rasters".into(),
        ));
    }
    let p = count as f64;
    Ok(DepthMetrics {
        rel: rel / p,
        log10: log10 / p,
        rms: (sq / p).sqrt(),
        delta_acc: thresholds
            .iter()
            .zip(&below)
            .map(|(&t, &c)| (t, c as f64 / p))
            .collect(),
        valid_pixels: count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub label: Label,
    pub accuracy: f64,
    pub iou: f64,
    /// Ground-truth pixel count.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegMetrics {
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub iou: f64,
    /// Classes with nonzero ground-truth support, ascending.
    pub per_class: Vec<ClassScore>,
    /// `confusion[gt][pred]`; predictions outside `0..num_classes` count in
    /// the ground-truth row total only.
    pub confusion: Vec<Vec<u64>>,
}

/// Pixel accuracy, mean class accuracy and mean IoU from the confusion
/// matrix. Unlabeled ground-truth pixels are ignored; averages run over
/// classes present in the ground truth.
pub fn seg_metrics(
    pred: &Raster<Label>,
    gt: &Raster<Label>,
    num_classes: usize,
) -> Result<SegMetrics, MetricsError> {
    check_shape(pred.width(), pred.height(), gt.width(), gt.height())?;
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    let mut row_total = vec![0u64; num_classes];
    for (pixel, (&p, &g)) in pred.as_slice().iter().zip(gt.as_slice()).enumerate() {
        if g == UNLABELED {
            continue;
        }
        let gi = g as usize;
        if gi >= num_classes {
            return Err(MetricsError::LabelOutOfRange {
                label: g,
                pixel,
                num_classes,
            });
        }
        row_total[gi] += 1;
        if (p as usize) < num_classes && p != UNLABELED {
            confusion[gi][p as usize] += 1;
        }
    }

    let total: u64 = row_total.iter().sum();
    if total == 0 {
        return Err(MetricsError::Undefined(
            "ground truth has no labeled pixels".into(),
        ));
    }
    let trace: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
    let col_total: Vec<u64> = (0..num_classes)
        .map(|c| confusion.iter().map(|row| row[c]).sum())
        .collect();

    let per_class: Vec<ClassScore> = (0..num_classes)
        .filter(|&c| row_total[c] > 0)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let union = (row_total[c] + col_total[c] - confusion[c][c]) as f64;
            ClassScore {
                label: c as Label,
                accuracy: tp / row_total[c] as f64,
                iou: tp / union,
                support: row_total[c],
            }
        })
        .collect();
    let k = per_class.len() as f64;
    Ok(SegMetrics {
        pixel_acc: trace as f64 / total as f64,
        mean_acc: per_class.iter().map(|c| c.accuracy).sum::<f64>() / k,
        iou: per_class.iter().map(|c| c.iou).sum::<f64>() / k,
        per_class,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconMetrics {
    /// Mean distance from reconstructed points to the nearest ground-truth point.
    pub accuracy: f64,
    /// Fraction of ground-truth points with a reconstructed point within `threshold`.
    pub completeness: f64,
    pub threshold: f64,
}

/// Accuracy and completeness of a reconstruction. `threshold` carries the
/// clouds' length unit.
pub fn recon_metrics(
    recon: &LabeledCloud,
    gt: &LabeledCloud,
    threshold: f64,
) -> Result<ReconMetrics, MetricsError> {
    if recon.is_empty() || gt.is_empty() {
        return Err(MetricsError::Undefined("empty point cloud".into()));
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(MetricsError::Undefined(format!(
            "invalid completeness threshold {threshold}"
        )));
    }
    let recon_pos = recon.positions();
    let gt_pos = gt.positions();
    let gt_tree = KdTree::new(&gt_pos);
    let recon_tree = KdTree::new(&recon_pos);

    let mut sum = 0.0;
    for p in &recon_pos {
        let (_, d2) = gt_tree.nearest(p).expect("non-empty tree");
        sum += d2.sqrt();
    }
    let covered = gt_pos
        .iter()
        .filter(|q| {
            let (_, d2) = recon_tree.nearest(q).expect("non-empty tree");
            d2.sqrt() <= threshold
        })
        .count();
    Ok(ReconMetrics {
        accuracy: sum / recon_pos.len() as f64,
        completeness: covered as f64 / gt_pos.len() as f64,
        threshold,
    })
}

fn check_shape(pw: usize, ph: usize, gw: usize, gh: usize) -> Result<(), MetricsError> {
    if pw != gw || ph != gh {
        return Err(MetricsError::ShapeMismatch(pw, ph, gw, gh));
    }
    Ok(())
}
