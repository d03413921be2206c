//! Independent reference implementations shared by the property and acceptance suites.
#![allow(dead_code)]

use sparsedet::eval::{EvalImage, GtBox};
use sparsedet::geometry::Xyxy;

/// Complete-IoU loss straight from the definition, using center/size form.
pub fn ciou_reference(p: &Xyxy, t: &Xyxy) -> f64 {
    let eps = 1e-9;
    let (pcx, pcy, pw, ph) = ((p.x1 + p.x2) / 2.0, (p.y1 + p.y2) / 2.0, p.x2 - p.x1, p.y2 - p.y1);
    let (tcx, tcy, tw, th) = ((t.x1 + t.x2) / 2.0, (t.y1 + t.y2) / 2.0, t.x2 - t.x1, t.y2 - t.y1);
    let overlap_x = (pcx + pw / 2.0).min(tcx + tw / 2.0) - (pcx - pw / 2.0).max(tcx - tw / 2.0);
    let overlap_y = (pcy + ph / 2.0).min(tcy + th / 2.0) - (pcy - ph / 2.0).max(tcy - th / 2.0);
    let inter = overlap_x.max(0.0) * overlap_y.max(0.0);
    let iou = inter / (pw * ph + tw * th - inter + eps);
    let enclose_w = (pcx + pw / 2.0).max(tcx + tw / 2.0) - (pcx - pw / 2.0).min(tcx - tw / 2.0);
    let enclose_h = (pcy + ph / 2.0).max(tcy + th / 2.0) - (pcy - ph / 2.0).min(tcy - th / 2.0);
    let rho2 = (pcx - tcx).powi(2) + (pcy - tcy).powi(2);
    let c2 = enclose_w.powi(2) + enclose_h.powi(2) + eps;
    let v = 4.0 / std::f64::consts::PI.powi(2) * ((tw / th).atan() - (pw / (ph + eps)).atan()).powi(2);
    let alpha = v / (1.0 - iou + v + eps);
    1.0 - iou + rho2 / c2 + alpha * v
}

/// Relative error with a floor on the denominator so near-zero gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Precision/recall after admitting every detection of `class_id` with
/// confidence at least `cutoff`, matched from scratch.
fn pr_at_cutoff(images: &[EvalImage], class_id: usize, cutoff: f64, iou_match: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut admitted = 0;
    for im in images {
        let mut dets: Vec<_> = im.detections.iter().filter(|d| d.class_id == class_id && d.confidence >= cutoff).collect();
        dets.sort_by(|a, b| sparsedet::eval::detection_order(a, b));
        let mut used = vec![false; im.gt.len()];
        for d in dets {
            admitted += 1;
            let best = im
                .gt
                .iter()
                .enumerate()
                .filter(|(k, g)| !used[*k] && g.class_id == class_id && g.bbox.iou(&d.bbox) >= iou_match)
                .fold(None::<(usize, f64)>, |acc, (k, g)| {
                    let iou = g.bbox.iou(&d.bbox);
                    match acc {
                        Some((_, b)) if b >= iou => acc,
                        _ => Some((k, iou)),
                    }
                });
            if let Some((k, _)) = best {
                used[k] = true;
                tp += 1;
            }
        }
    }
    (tp, admitted)
}

/// Brute-force AP: every distinct confidence is tried as a cutoff, and the
/// precision envelope is integrated over the resulting recall levels.
pub fn ap_oracle(images: &[EvalImage], class_id: usize, iou_match: f64) -> Option<f64> {
    let num_gt = images.iter().flat_map(|im| &im.gt).filter(|g| g.class_id == class_id).count();
    if num_gt == 0 {
        return None;
    }
    let mut cutoffs: Vec<f64> = images
        .iter()
        .flat_map(|im| &im.detections)
        .filter(|d| d.class_id == class_id)
        .map(|d| d.confidence)
        .collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    // in order of decreasing cutoff, i.e. growing admitted sets
    let points: Vec<(f64, f64)> = cutoffs
        .iter()
        .map(|&t| {
            let (tp, n) = pr_at_cutoff(images, class_id, t, iou_match);
            (tp as f64 / num_gt as f64, tp as f64 / n as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (k, &(r, _)) in points.iter().enumerate() {
        let envelope = points[k..].iter().map(|&(_, p)| p).fold(f64::NEG_INFINITY, f64::max);
        ap += (r - prev) * envelope;
        prev = r;
    }
    Some(ap)
}

pub fn gt(class_id: usize, x1: f64, y1: f64, x2: f64, y2: f64) -> GtBox {
    GtBox {
        class_id,
        bbox: Xyxy::new(x1, y1, x2, y2),
    }
}
