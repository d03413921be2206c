//! Complete-IoU box loss: `1 - IoU + ρ²/c² + αv`.

use crate::error::{Error, Result};
use crate::geometry::Xyxy;

pub const EPS: f64 = 1e-9;
const FOUR_OVER_PI_SQ: f64 = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);

#[derive(Debug, Clone, PartialEq)]
pub struct CiouOutput {
    pub loss: f64,
    /// d loss / d predicted corners `(x1, y1, x2, y2)` per cell; zero for negatives.
    pub grad: Vec<[f64; 4]>,
    pub num_positive: usize,
}

/// Loss for one pair and its gradient w.r.t. the predicted corners.
pub fn ciou_pair(p: &Xyxy, t: &Xyxy) -> (f64, [f64; 4]) {
    let (w, h) = (p.x2 - p.x1, p.y2 - p.y1);
    let (tw, th) = (t.x2 - t.x1, t.y2 - t.y1);

    // intersection
    let iw = p.x2.min(t.x2) - p.x1.max(t.x1);
    let ih = p.y2.min(t.y2) - p.y1.max(t.y1);
    let overlap = iw > 0.0 && ih > 0.0;
    let inter = if overlap { iw * ih } else { 0.0 };
    // d inter / d (x1, y1, x2, y2)
    let d_inter = if overlap {
        [
            if p.x1 > t.x1 { -ih } else { 0.0 },
            if p.y1 > t.y1 { -iw } else { 0.0 },
            if p.x2 < t.x2 { ih } else { 0.0 },
            if p.y2 < t.y2 { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let union = w * h + tw * th - inter + EPS;
    let d_area = [-h, -w, h, w];
    let iou = inter / union;
    let d_iou: [f64; 4] = std::array::from_fn(|k| (d_inter[k] * union - inter * (d_area[k] - d_inter[k])) / (union * union));

    // enclosing box diagonal
    let cw = p.x2.max(t.x2) - p.x1.min(t.x1);
    let ch = p.y2.max(t.y2) - p.y1.min(t.y1);
    let c2 = cw * cw + ch * ch + EPS;
    let d_c2 = [
        if p.x1 < t.x1 { -2.0 * cw } else { 0.0 },
        if p.y1 < t.y1 { -2.0 * ch } else { 0.0 },
        if p.x2 > t.x2 { 2.0 * cw } else { 0.0 },
        if p.y2 > t.y2 { 2.0 * ch } else { 0.0 },
    ];
    // squared center distance
    let dx = p.x1 + p.x2 - t.x1 - t.x2;
    let dy = p.y1 + p.y2 - t.y1 - t.y2;
    let rho2 = (dx * dx + dy * dy) / 4.0;
    let d_rho2 = [dx / 2.0, dy / 2.0, dx / 2.0, dy / 2.0];
    let dist = rho2 / c2;
    let d_dist: [f64; 4] = std::array::from_fn(|k| (d_rho2[k] * c2 - rho2 * d_c2[k]) / (c2 * c2));

    // aspect-ratio consistency
    let hp = h + EPS;
    let atan_diff = (tw / th).atan() - (w / hp).atan();
    let v = FOUR_OVER_PI_SQ * atan_diff * atan_diff;
    let denom = w * w + hp * hp;
    let d_atan_w = hp / denom;
    let d_atan_h = -w / denom;
    let dv_datan = -2.0 * FOUR_OVER_PI_SQ * atan_diff;
    let d_v = [-dv_datan * d_atan_w, -dv_datan * d_atan_h, dv_datan * d_atan_w, dv_datan * d_atan_h];
    let alpha = v / (1.0 - iou + v + EPS);

    let loss = 1.0 - iou + dist + alpha * v;
    // d(αv) = (2α - α²) dv + α² dIoU, with α depending on IoU and v
    let grad = std::array::from_fn(|k| -d_iou[k] + d_dist[k] + (2.0 * alpha - alpha * alpha) * d_v[k] + alpha * alpha * d_iou[k]);
    (loss, grad)
}

/// Mean CIoU loss over positive cells; zero when there are none.
pub fn ciou_loss(pred: &[Xyxy], target: &[Xyxy], fg: &[bool]) -> Result<f64> {
    Ok(ciou_with_grad(pred, target, fg)?.loss)
}

pub fn ciou_with_grad(pred: &[Xyxy], target: &[Xyxy], fg: &[bool]) -> Result<CiouOutput> {
    assert!(pred.len() == target.len() && pred.len() == fg.len(), "ciou input lengths");
    let num_positive = fg.iter().filter(|&&f| f).count();
    let mut grad = vec![[0.0; 4]; pred.len()];
    if num_positive == 0 {
        return Ok(CiouOutput { loss: 0.0, grad, num_positive });
    }
    let norm = num_positive as f64;
    let mut sum = 0.0;
    for (cell, ((p, t), &f)) in pred.iter().zip(target).zip(fg).enumerate() {
        if !f {
            continue;
        }
        if !(t.width() > 0.0 && t.height() > 0.0) {
            return Err(Error::DegenerateTarget { cell });
        }
        let (l, g) = ciou_pair(p, t);
        sum += l;
        grad[cell] = g.map(|v| v / norm);
    }
    Ok(CiouOutput {
        loss: sum / norm,
        grad,
        num_positive,
    })
}
