use serde::{Deserialize, Serialize};

use super::ap::EvalImage;
use super::detection::{detection_order, Detection};

/// How ground truth and detections are paired for the confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// All pairs above the IoU cut, highest IoU first.
    #[default]
    IouGreedy,
    /// Detections by descending confidence, each taking its best free ground truth.
    ConfidenceGreedy,
}

/// `(C+1)×(C+1)` counts, rows ground-truth class, columns detected class;
/// index `C` is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes + 1]; num_classes + 1],
        }
    }

    pub fn background(&self) -> usize {
        self.num_classes
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    /// Share of a class's ground truth left unmatched; `None` without ground truth.
    pub fn background_rate(&self, class_id: usize) -> Option<f64> {
        let total = self.row_sum(class_id);
        (total > 0).then(|| self.counts[class_id][self.background()] as f64 / total as f64)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(other_row) {
                *a += b;
            }
        }
    }
}

fn pairs_iou_greedy(image: &EvalImage, dets: &[Detection], iou_match: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (g, gt) in image.gt.iter().enumerate() {
        for (k, d) in dets.iter().enumerate() {
            let iou = gt.bbox.iou(&d.bbox);
            if iou >= iou_match {
                candidates.push((iou, g, k));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; image.gt.len()];
    let mut det_used = vec![false; dets.len()];
    let mut pairs = Vec::new();
    for (_, g, k) in candidates {
        if !gt_used[g] && !det_used[k] {
            gt_used[g] = true;
            det_used[k] = true;
            pairs.push((g, k));
        }
    }
    pairs
}

fn pairs_confidence_greedy(image: &EvalImage, dets: &[Detection], iou_match: f64) -> Vec<(usize, usize)> {
    let mut gt_used = vec![false; image.gt.len()];
    let mut pairs = Vec::new();
    for (k, d) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in image.gt.iter().enumerate() {
            let iou = gt.bbox.iou(&d.bbox);
            if !gt_used[g] && iou >= iou_match && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            gt_used[g] = true;
            pairs.push((g, k));
        }
    }
    pairs
}

/// Class-agnostic one-to-one matching of detections at or above `conf_threshold`.
pub fn confusion_matrix(images: &[EvalImage], num_classes: usize, conf_threshold: f64, iou_match: f64, strategy: MatchStrategy) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(num_classes);
    let bg = cm.background();
    for image in images {
        let mut dets: Vec<Detection> = image.detections.iter().filter(|d| d.confidence >= conf_threshold).copied().collect();
        dets.sort_by(detection_order);
        let pairs = match strategy {
            MatchStrategy::IouGreedy => pairs_iou_greedy(image, &dets, iou_match),
            MatchStrategy::ConfidenceGreedy => pairs_confidence_greedy(image, &dets, iou_match),
        };
        let mut gt_used = vec![false; image.gt.len()];
        let mut det_used = vec![false; dets.len()];
        for (g, k) in pairs {
            gt_used[g] = true;
            det_used[k] = true;
            cm.counts[image.gt[g].class_id][dets[k].class_id] += 1;
        }
        for (gt, _) in image.gt.iter().zip(&gt_used).filter(|(_, &u)| !u) {
            cm.counts[gt.class_id][bg] += 1;
        }
        for (d, _) in dets.iter().zip(&det_used).filter(|(_, &u)| !u) {
            cm.counts[bg][d.class_id] += 1;
        }
    }
    cm
}
