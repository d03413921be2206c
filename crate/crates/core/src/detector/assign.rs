use std::cmp::Ordering;

use ndarray::{Array2, Array3};

use super::{GridGeometry, NUM_SIDES};
use crate::scene::Annotation;

/// Per-cell training targets for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    /// G×G, cell center inside some visible box.
    pub fg_mask: Array2<bool>,
    /// G×G, owning box class (meaningful where `fg_mask`).
    pub target_class: Array2<usize>,
    /// G×G×4 distances (left, top, right, bottom) from the cell center to the
    /// owning box sides, in strides, clamped to `[0, bins - 1]`.
    pub target_box: Array3<f64>,
    /// G×G×4 owning box corners `(x1, y1, x2, y2)`, normalized.
    pub target_corners: Array3<f64>,
    /// G×G×C, cell center inside at least one visible box of class c.
    pub gt_area_mask: Array3<bool>,
    /// Side distances that needed clamping into the bin range.
    pub clamped_sides: usize,
}

impl TargetAssignment {
    pub fn num_positive(&self) -> usize {
        self.fg_mask.iter().filter(|&&f| f).count()
    }
}

/// Total order used to pick the owner when a cell center lies in several boxes:
/// smallest area first, then class and coordinates so that input order never matters.
fn owner_order(a: &Annotation, b: &Annotation) -> Ordering {
    a.bbox
        .area()
        .total_cmp(&b.bbox.area())
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

/// Center-in-box assignment. Empty `visible_gt` yields an all-negative grid.
pub fn assign_targets(visible_gt: &[Annotation], geom: GridGeometry, num_classes: usize) -> TargetAssignment {
    let g = geom.grid;
    let mut out = TargetAssignment {
        fg_mask: Array2::from_elem((g, g), false),
        target_class: Array2::zeros((g, g)),
        target_box: Array3::zeros((g, g, NUM_SIDES)),
        target_corners: Array3::zeros((g, g, NUM_SIDES)),
        gt_area_mask: Array3::from_elem((g, g, num_classes), false),
        clamped_sides: 0,
    };
    let max_bin = (geom.bins - 1) as f64;
    let stride = geom.stride_norm();
    let boxes: Vec<_> = visible_gt.iter().map(|a| (a, a.bbox.to_xyxy())).collect();
    for i in 0..g {
        for j in 0..g {
            let (cx, cy) = geom.cell_center(i, j);
            let mut owner: Option<(&Annotation, crate::geometry::Xyxy)> = None;
            for &(ann, b) in &boxes {
                if !b.contains_strict(cx, cy) {
                    continue;
                }
                if ann.class_id < num_classes {
                    out.gt_area_mask[[i, j, ann.class_id]] = true;
                }
                if owner.is_none_or(|(cur, _)| owner_order(ann, cur) == Ordering::Less) {
                    owner = Some((ann, b));
                }
            }
            if let Some((ann, b)) = owner {
                out.fg_mask[[i, j]] = true;
                out.target_class[[i, j]] = ann.class_id;
                let sides = [(cx - b.x1) / stride, (cy - b.y1) / stride, (b.x2 - cx) / stride, (b.y2 - cy) / stride];
                for (s, d) in sides.into_iter().enumerate() {
                    if !(0.0..=max_bin).contains(&d) {
                        out.clamped_sides += 1;
                    }
                    out.target_box[[i, j, s]] = d.clamp(0.0, max_bin);
                }
                for (s, v) in [b.x1, b.y1, b.x2, b.y2].into_iter().enumerate() {
                    out.target_corners[[i, j, s]] = v;
                }
            }
        }
    }
    out
}
