use ndarray::{Array3, Array4};

use super::{GridGeometry, NUM_SIDES};

/// Softmax expectation of bin indices `0..logits.len()`.
pub fn expected_side(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut acc = 0.0;
    for (k, &l) in logits.iter().enumerate() {
        let e = (l - max).exp();
        z += e;
        acc += e * k as f64;
    }
    acc / z
}

/// G×G×4 expected side distances in strides.
pub fn side_distances(box_dists: &Array4<f32>) -> Array3<f64> {
    let (g, _, sides, _) = box_dists.dim();
    let mut out = Array3::zeros((g, g, sides));
    let mut buf = Vec::new();
    for i in 0..g {
        for j in 0..g {
            for s in 0..sides {
                buf.clear();
                buf.extend(box_dists.slice(ndarray::s![i, j, s, ..]).iter().map(|&v| v as f64));
                out[[i, j, s]] = expected_side(&buf);
            }
        }
    }
    out
}

/// G×G×4 boxes `(x1, y1, x2, y2)` in normalized image coordinates, clamped to the image.
pub fn decode_boxes(box_dists: &Array4<f32>, geom: GridGeometry) -> Array3<f64> {
    let d = side_distances(box_dists);
    let g = geom.grid;
    let s = geom.stride_norm();
    let mut out = Array3::zeros((g, g, NUM_SIDES));
    for i in 0..g {
        for j in 0..g {
            let (cx, cy) = geom.cell_center(i, j);
            let corners = [cx - d[[i, j, 0]] * s, cy - d[[i, j, 1]] * s, cx + d[[i, j, 2]] * s, cy + d[[i, j, 3]] * s];
            for (k, v) in corners.into_iter().enumerate() {
                out[[i, j, k]] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}
