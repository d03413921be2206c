//! Composite detection loss: `λ_ciou·CIoU + λ_dfl·DFL + λ_bce·BCE`, with the
//! classification term optionally masked by [`compute_cfpl_mask`].

mod bce;
mod cfpl;
mod ciou;
mod dfl;

pub use bce::{bce_loss, bce_term, bce_with_grad, count_positive_rows, sigmoid, BceOutput};
pub use cfpl::{compute_cfpl_mask, quantile_sorted, CfplConfig, CfplMask, NoPositivePolicy};
pub use ciou::{ciou_loss, ciou_pair, ciou_with_grad, CiouOutput};
pub use dfl::{dfl_loss, dfl_side, dfl_with_grad, DflOutput};

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::detector::{GridGeometry, PredictionGrid, TargetAssignment, NUM_SIDES};
use crate::error::{Error, Result};
use crate::geometry::Xyxy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ciou: f64,
    pub lambda_dfl: f64,
    pub lambda_bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ciou: 7.5,
            lambda_dfl: 1.5,
            lambda_bce: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_ciou, self.lambda_dfl, self.lambda_bce].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and non-negative".into()))
        }
    }
}

/// Head outputs of a batch flattened to cells, in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPredictions {
    /// `cells × classes` logits.
    pub scores: Array2<f64>,
    /// `cells × 4 × bins` logits.
    pub box_logits: Array3<f64>,
}

impl BatchPredictions {
    pub fn from_grids<'a>(grids: impl IntoIterator<Item = &'a PredictionGrid>) -> Self {
        let grids: Vec<&PredictionGrid> = grids.into_iter().collect();
        let (g, _, nc) = grids[0].class_scores.dim();
        let bins = grids[0].box_dists.dim().3;
        let per = g * g;
        let mut scores = Array2::zeros((per * grids.len(), nc));
        let mut box_logits = Array3::zeros((per * grids.len(), NUM_SIDES, bins));
        for (b, grid) in grids.iter().enumerate() {
            for ((i, j, c), v) in grid.class_scores.indexed_iter() {
                scores[[b * per + i * g + j, c]] = *v as f64;
            }
            for ((i, j, sd, k), v) in grid.box_dists.indexed_iter() {
                box_logits[[b * per + i * g + j, sd, k]] = *v as f64;
            }
        }
        Self { scores, box_logits }
    }

    pub fn num_cells(&self) -> usize {
        self.scores.nrows()
    }
}

/// Assignment of a batch flattened to cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets {
    pub fg: Vec<bool>,
    /// `cells × classes` one-hot classification targets.
    pub class_targets: Array2<f64>,
    /// `cells × 4` side distances in strides.
    pub sides: Array2<f64>,
    pub boxes: Vec<Xyxy>,
    /// `cells × classes`.
    pub gt_area: Array2<bool>,
    /// Cell centers, normalized.
    pub anchors: Vec<(f64, f64)>,
    pub stride_norm: f64,
}

impl BatchTargets {
    pub fn from_assignments<'a>(assignments: impl IntoIterator<Item = &'a TargetAssignment>, geom: GridGeometry, num_classes: usize) -> Self {
        let assignments: Vec<&TargetAssignment> = assignments.into_iter().collect();
        let g = geom.grid;
        let per = g * g;
        let n = per * assignments.len();
        let mut t = Self {
            fg: vec![false; n],
            class_targets: Array2::zeros((n, num_classes)),
            sides: Array2::zeros((n, NUM_SIDES)),
            boxes: vec![Xyxy::new(0.0, 0.0, 0.0, 0.0); n],
            gt_area: Array2::from_elem((n, num_classes), false),
            anchors: Vec::with_capacity(n),
            stride_norm: geom.stride_norm(),
        };
        for (b, a) in assignments.iter().enumerate() {
            for i in 0..g {
                for j in 0..g {
                    let cell = b * per + i * g + j;
                    t.anchors.push(geom.cell_center(i, j));
                    for c in 0..num_classes {
                        t.gt_area[[cell, c]] = a.gt_area_mask[[i, j, c]];
                    }
                    if a.fg_mask[[i, j]] {
                        t.fg[cell] = true;
                        t.class_targets[[cell, a.target_class[[i, j]]]] = 1.0;
                        for sd in 0..NUM_SIDES {
                            t.sides[[cell, sd]] = a.target_box[[i, j, sd]];
                        }
                        let c = a.target_corners.slice(s![i, j, ..]);
                        t.boxes[cell] = Xyxy::new(c[0], c[1], c[2], c[3]);
                    }
                }
            }
        }
        t
    }

    pub fn num_positive(&self) -> usize {
        self.fg.iter().filter(|&&f| f).count()
    }
}

/// Per-step loss record.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Classification loss after masking (unweighted).
    pub bce: f64,
    pub ciou: f64,
    pub dfl: f64,
    pub masked_count: usize,
    pub thresholds: Vec<f64>,
    pub num_positive: usize,
    pub clamped_sides: usize,
}

impl LossBreakdown {
    /// `step,L_total,L_bce,L_ciou,L_dfl,masked_count,T_0,...,T_{C-1}`.
    pub fn log_line(&self, step: usize) -> String {
        let mut s = format!("{step},{},{},{},{},{}", self.total, self.bce, self.ciou, self.dfl, self.masked_count);
        for t in &self.thresholds {
            s.push(',');
            s.push_str(&t.to_string());
        }
        s
    }

    pub fn log_header(num_classes: usize) -> String {
        let mut s = String::from("step,L_total,L_bce,L_ciou,L_dfl,masked_count");
        for c in 0..num_classes {
            s.push_str(&format!(",T_{c}"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub mask: CfplMask,
    /// d total / d class logits, `cells × classes`.
    pub grad_scores: Array2<f64>,
    /// d total / d box logits, `cells × 4 × bins`.
    pub grad_box_logits: Array3<f64>,
}

/// Softmax expectations and their softmax probabilities for every cell side.
fn expectations(box_logits: &Array3<f64>) -> (Array2<f64>, Array3<f64>) {
    let (n, sides, bins) = box_logits.dim();
    let mut e = Array2::zeros((n, sides));
    let mut p = Array3::zeros((n, sides, bins));
    let mut buf = Vec::with_capacity(bins);
    for cell in 0..n {
        for sd in 0..sides {
            let logits: Vec<f64> = box_logits.slice(s![cell, sd, ..]).to_vec();
            dfl::log_softmax(&logits, &mut buf);
            let mut acc = 0.0;
            for (k, lp) in buf.iter().enumerate() {
                let pk = lp.exp();
                p[[cell, sd, k]] = pk;
                acc += pk * k as f64;
            }
            e[[cell, sd]] = acc;
        }
    }
    (e, p)
}

/// Predicted corners from anchors and expected side distances (unclamped, for the loss).
pub fn predicted_boxes(box_logits: &Array3<f64>, targets: &BatchTargets) -> Vec<Xyxy> {
    let (e, _) = expectations(box_logits);
    corners_from_sides(&e, targets)
}

fn corners_from_sides(e: &Array2<f64>, targets: &BatchTargets) -> Vec<Xyxy> {
    let sn = targets.stride_norm;
    targets
        .anchors
        .iter()
        .enumerate()
        .map(|(cell, &(ax, ay))| Xyxy::new(ax - e[[cell, 0]] * sn, ay - e[[cell, 1]] * sn, ax + e[[cell, 2]] * sn, ay + e[[cell, 3]] * sn))
        .collect()
}

/// Weighted total loss and its gradients. With `cfg.enabled == false` the mask
/// is all-ones and the result is the unmodified baseline loss.
pub fn total_loss(preds: &BatchPredictions, targets: &BatchTargets, weights: &LossWeights, cfg: &CfplConfig) -> Result<LossOutput> {
    let n = preds.num_cells();
    if targets.fg.len() != n || targets.class_targets.dim() != preds.scores.dim() || preds.box_logits.dim().0 != n {
        return Err(Error::Shape {
            expected: format!("{n} cells × {} classes", preds.scores.ncols()),
            actual: format!("{} target cells × {} classes", targets.fg.len(), targets.class_targets.ncols()),
        });
    }
    let mask = compute_cfpl_mask(preds.scores.view(), targets.gt_area.view(), cfg);
    let bce = bce_with_grad(preds.scores.view(), targets.class_targets.view(), mask.mask.view());

    let (e, p) = expectations(&preds.box_logits);
    let pred_boxes = corners_from_sides(&e, targets);
    let ciou = ciou_with_grad(&pred_boxes, &targets.boxes, &targets.fg)?;
    let dfl = dfl_with_grad(preds.box_logits.view(), targets.sides.view(), &targets.fg);

    let grad_scores = bce.grad.mapv(|g| g * weights.lambda_bce);
    let mut grad_box = dfl.grad.mapv(|g| g * weights.lambda_dfl);
    let sn = targets.stride_norm;
    let bins = preds.box_logits.dim().2;
    for cell in (0..n).filter(|&c| targets.fg[c]) {
        let gc = ciou.grad[cell];
        // x1 = ax - l·s, y1 = ay - t·s, x2 = ax + r·s, y2 = ay + b·s
        let d_side = [-gc[0] * sn, -gc[1] * sn, gc[2] * sn, gc[3] * sn];
        for sd in 0..NUM_SIDES {
            let scale = weights.lambda_ciou * d_side[sd];
            for k in 0..bins {
                grad_box[[cell, sd, k]] += scale * p[[cell, sd, k]] * (k as f64 - e[[cell, sd]]);
            }
        }
    }

    let total = weights.lambda_ciou * ciou.loss + weights.lambda_dfl * dfl.loss + weights.lambda_bce * bce.loss;
    Ok(LossOutput {
        breakdown: LossBreakdown {
            total,
            bce: bce.loss,
            ciou: ciou.loss,
            dfl: dfl.loss,
            masked_count: mask.masked_count(),
            thresholds: mask.thresholds.clone(),
            num_positive: bce.num_positive,
            clamped_sides: dfl.clamped,
        },
        mask,
        grad_scores,
        grad_box_logits: grad_box,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::assign_targets;
    use crate::geometry::CxCyWh;
    use crate::scene::Annotation;

    fn geom() -> GridGeometry {
        GridGeometry {
            grid: 4,
            stride: 8,
            image_size: 32,
            bins: 8,
        }
    }

    fn targets_for(anns: &[Annotation]) -> BatchTargets {
        let a = assign_targets(anns, geom(), 2);
        BatchTargets::from_assignments([&a], geom(), 2)
    }

    fn box_ann(class_id: usize, x1: f64, y1: f64, x2: f64, y2: f64) -> Annotation {
        Annotation {
            class_id,
            bbox: Xyxy::new(x1 / 32.0, y1 / 32.0, x2 / 32.0, y2 / 32.0).to_cxcywh(),
        }
    }

    /// Logits that reproduce each integer target exactly and near-certain class scores.
    fn perfect_predictions(t: &BatchTargets) -> BatchPredictions {
        let n = t.fg.len();
        let scores = t.class_targets.mapv(|y| if y > 0.5 { 60.0 } else { -60.0 });
        let mut box_logits = Array3::from_elem((n, 4, 8), -60.0);
        for cell in 0..n {
            for sd in 0..4 {
                let d = t.sides[[cell, sd]];
                box_logits[[cell, sd, d.round() as usize]] = 60.0;
            }
        }
        BatchPredictions { scores, box_logits }
    }

    #[test]
    fn perfect_predictions_give_zero_loss() {
        // box edges on even pixel multiples of the stride keep side targets integral
        let t = targets_for(&[box_ann(0, 4.0, 4.0, 20.0, 20.0), box_ann(1, 12.0, 12.0, 28.0, 28.0)]);
        assert!(t
            .sides
            .iter()
            .zip(&t.fg.iter().flat_map(|&f| [f; 4]).collect::<Vec<_>>())
            .all(|(d, f)| !f || d.fract() == 0.0));
        let out = total_loss(&perfect_predictions(&t), &t, &LossWeights::default(), &CfplConfig::default()).unwrap();
        assert!(out.breakdown.total < 1e-6, "{:?}", out.breakdown);
    }

    #[test]
    fn bce_only_weights_isolate_classification() {
        let t = targets_for(&[box_ann(0, 4.0, 4.0, 20.0, 20.0)]);
        let n = t.fg.len();
        let preds = BatchPredictions {
            scores: Array2::from_shape_fn((n, 2), |(i, c)| ((i * 3 + c) % 7) as f64 * 0.3 - 1.0),
            box_logits: Array3::from_shape_fn((n, 4, 8), |(i, s, k)| ((i + s * 2 + k) % 5) as f64 * 0.2),
        };
        let w = LossWeights {
            lambda_ciou: 0.0,
            lambda_dfl: 0.0,
            lambda_bce: 1.0,
        };
        let out = total_loss(&preds, &t, &w, &CfplConfig::default()).unwrap();
        let ones = Array2::from_elem((n, 2), true);
        assert_eq!(out.breakdown.total, bce_loss(preds.scores.view(), t.class_targets.view(), ones.view()));
        assert!(out.grad_box_logits.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn log_line_prints_inf_for_unset_thresholds() {
        let b = LossBreakdown {
            total: 1.5,
            bce: 0.25,
            ciou: 0.125,
            dfl: 2.0,
            masked_count: 3,
            thresholds: vec![0.5, f64::INFINITY],
            num_positive: 1,
            clamped_sides: 0,
        };
        assert_eq!(b.log_line(7), "7,1.5,0.25,0.125,2,3,0.5,inf");
        assert_eq!(LossBreakdown::log_header(2), "step,L_total,L_bce,L_ciou,L_dfl,masked_count,T_0,T_1");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let t = targets_for(&[]);
        let preds = BatchPredictions {
            scores: Array2::zeros((3, 2)),
            box_logits: Array3::zeros((3, 4, 8)),
        };
        assert!(total_loss(&preds, &t, &LossWeights::default(), &CfplConfig::default()).is_err());
        let _ = CxCyWh::new(0.0, 0.0, 0.0, 0.0);
    }
}
