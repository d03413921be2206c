use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detector::{decode_boxes, GridGeometry, PredictionGrid};
use crate::geometry::Xyxy;
use crate::loss::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Xyxy,
    pub class_id: usize,
    pub confidence: f64,
}

/// Descending confidence, ties by class id then box coordinates.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
        .then(a.bbox.x2.total_cmp(&b.bbox.x2))
        .then(a.bbox.y2.total_cmp(&b.bbox.y2))
}

/// Class-wise greedy suppression: a box is dropped when it overlaps an
/// already kept box of its class with IoU above `iou_threshold`.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if !kept.iter().any(|k| k.class_id == d.class_id && k.bbox.iou(&d.bbox) > iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Candidates below this confidence are dropped before suppression.
    pub min_confidence: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.001,
            nms_iou: 0.5,
            max_detections: 300,
        }
    }
}

/// One candidate per cell (its highest-scoring class), then suppression and
/// truncation to the most confident `max_detections`.
pub fn detections_from_grid(grid: &PredictionGrid, geom: GridGeometry, cfg: &DetectConfig) -> Vec<Detection> {
    let boxes = decode_boxes(&grid.box_dists, geom);
    let (g, _, nc) = grid.class_scores.dim();
    let mut candidates = Vec::new();
    for i in 0..g {
        for j in 0..g {
            let mut best = 0;
            for c in 1..nc {
                if grid.class_scores[[i, j, c]] > grid.class_scores[[i, j, best]] {
                    best = c;
                }
            }
            let confidence = sigmoid(grid.class_scores[[i, j, best]] as f64);
            if confidence < cfg.min_confidence {
                continue;
            }
            let bbox = Xyxy::new(boxes[[i, j, 0]], boxes[[i, j, 1]], boxes[[i, j, 2]], boxes[[i, j, 3]]);
            candidates.push(Detection {
                bbox,
                class_id: best,
                confidence,
            });
        }
    }
    let mut kept = nms(&candidates, cfg.nms_iou);
    kept.truncate(cfg.max_detections);
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x1: f64, class_id: usize, confidence: f64) -> Detection {
        Detection {
            bbox: Xyxy::new(x1, 0.0, x1 + 0.2, 0.2),
            class_id,
            confidence,
        }
    }

    #[test]
    fn empty_input() {
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn identical_boxes_keep_the_confident_one() {
        let out = nms(&[det(0.1, 0, 0.8), det(0.1, 0, 0.9)], 0.5);
        assert_eq!(out, vec![det(0.1, 0, 0.9)]);
    }

    #[test]
    fn disjoint_boxes_all_kept() {
        let out = nms(&[det(0.0, 0, 0.8), det(0.5, 0, 0.9)], 0.5);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn other_classes_are_not_suppressed() {
        let out = nms(&[det(0.1, 0, 0.8), det(0.1, 1, 0.9)], 0.5);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn ties_order_by_class_then_box() {
        let mut v = vec![det(0.5, 1, 0.7), det(0.3, 0, 0.7), det(0.1, 0, 0.7)];
        v.sort_by(detection_order);
        assert_eq!(v, vec![det(0.1, 0, 0.7), det(0.3, 0, 0.7), det(0.5, 1, 0.7)]);
    }
}
