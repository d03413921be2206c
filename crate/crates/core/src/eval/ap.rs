use serde::{Deserialize, Serialize};

use super::detection::{detection_order, Detection};
use crate::geometry::Xyxy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub class_id: usize,
    pub bbox: Xyxy,
}

/// Detections and full ground truth of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalImage {
    pub detections: Vec<Detection>,
    pub gt: Vec<GtBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Lowest confidence admitted at this point.
    pub confidence: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub num_gt: usize,
    pub points: Vec<PrPoint>,
}

impl ApResult {
    /// Recall over detections with confidence at least `conf`.
    pub fn recall_at(&self, conf: f64) -> f64 {
        self.points.iter().rev().find(|p| p.confidence >= conf).map_or(0.0, |p| p.recall)
    }
}

/// Ranked detections of one class: `(image, detection)` in matching order.
fn ranked(images: &[EvalImage], class_id: usize) -> Vec<(usize, Detection)> {
    let mut out: Vec<(usize, Detection)> = images
        .iter()
        .enumerate()
        .flat_map(|(im, e)| e.detections.iter().filter(|d| d.class_id == class_id).map(move |d| (im, *d)))
        .collect();
    out.sort_by(|a, b| detection_order(&a.1, &b.1).then(a.0.cmp(&b.0)));
    out
}

/// Whether the detection claims an unmatched same-class ground truth, taking
/// the highest-IoU candidate (lowest index on ties).
pub(crate) fn claim(det: &Detection, gt: &[GtBox], used: &mut [bool], iou_match: f64) -> bool {
    let mut best: Option<(usize, f64)> = None;
    for (k, g) in gt.iter().enumerate() {
        if used[k] || g.class_id != det.class_id {
            continue;
        }
        let iou = det.bbox.iou(&g.bbox);
        if iou >= iou_match && best.is_none_or(|(_, b)| iou > b) {
            best = Some((k, iou));
        }
    }
    if let Some((k, _)) = best {
        used[k] = true;
        true
    } else {
        false
    }
}

/// Confidence-swept precision/recall for one class with all-points
/// interpolation. Points are emitted only after a full group of equal
/// confidences, so each corresponds to a real cutoff. `None` when the class
/// has no ground truth.
pub fn average_precision(images: &[EvalImage], class_id: usize, iou_match: f64) -> Option<ApResult> {
    let num_gt: usize = images.iter().map(|e| e.gt.iter().filter(|g| g.class_id == class_id).count()).sum();
    if num_gt == 0 {
        return None;
    }
    let ranked = ranked(images, class_id);
    let mut used: Vec<Vec<bool>> = images.iter().map(|e| vec![false; e.gt.len()]).collect();
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, (im, d)) in ranked.iter().enumerate() {
        if claim(d, &images[*im].gt, &mut used[*im], iou_match) {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_end = ranked.get(k + 1).is_none_or(|(_, next)| next.confidence != d.confidence);
        if group_end {
            points.push(PrPoint {
                confidence: d.confidence,
                recall: tp as f64 / num_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
            });
        }
    }
    Some(ApResult {
        ap: envelope_area(&points),
        num_gt,
        points,
    })
}

/// Area under the monotone precision envelope, summed over recall increments.
fn envelope_area(points: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (p, &env) in points.iter().zip(&envelope) {
        area += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    area
}
