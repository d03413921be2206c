use ndarray::{Array2, ArrayView2, Zip};

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    /// d loss / d logit, zero wherever the mask is zero.
    pub grad: Array2<f64>,
    pub num_positive: usize,
}

/// `-[y ln σ(x) + (1 - y) ln(1 - σ(x))]` in logit space.
#[inline]
pub fn bce_term(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rows (cells) with at least one positive target.
pub fn count_positive_rows(targets: ArrayView2<f64>) -> usize {
    targets.rows().into_iter().filter(|r| r.iter().any(|&t| t > 0.0)).count()
}

/// Masked binary cross-entropy over `cells × classes` logits, summed and
/// divided by the number of positive cells (at least 1).
pub fn bce_loss(scores: ArrayView2<f64>, targets: ArrayView2<f64>, mask: ArrayView2<bool>) -> f64 {
    bce_with_grad(scores, targets, mask).loss
}

pub fn bce_with_grad(scores: ArrayView2<f64>, targets: ArrayView2<f64>, mask: ArrayView2<bool>) -> BceOutput {
    assert_eq!(scores.dim(), targets.dim(), "scores/targets shape");
    assert_eq!(scores.dim(), mask.dim(), "scores/mask shape");
    let num_positive = count_positive_rows(targets);
    let norm = num_positive.max(1) as f64;
    let mut sum = 0.0;
    let mut grad = Array2::zeros(scores.dim());
    Zip::from(&mut grad).and(scores).and(targets).and(mask).for_each(|g, &x, &y, &m| {
        if m {
            sum += bce_term(x, y);
            *g = (sigmoid(x) - y) / norm;
        }
    });
    BceOutput {
        loss: sum / norm,
        grad,
        num_positive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stable_at_extreme_logits() {
        for x in [-50.0, -30.0, 0.0, 30.0, 50.0] {
            for y in [0.0, 1.0] {
                let v = bce_term(x, y);
                assert!(v.is_finite() && v >= 0.0, "x={x} y={y} -> {v}");
            }
        }
        assert!((bce_term(-50.0, 1.0) - 50.0).abs() < 1e-12);
        assert!(bce_term(50.0, 1.0) < 1e-20);
    }

    #[test]
    fn half_probability_positive_is_ln2() {
        let s = array![[0.0]];
        let t = array![[1.0]];
        let m = array![[true]];
        assert!((bce_loss(s.view(), t.view(), m.view()) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn masked_entries_vanish_from_loss_and_grad() {
        let s = array![[0.3, -1.2]];
        let t = array![[1.0, 0.0]];
        let a = bce_term(0.3, 1.0);
        let out = bce_with_grad(s.view(), t.view(), array![[true, false]].view());
        assert!((out.loss - a).abs() < 1e-15);
        assert_eq!(out.grad[[0, 1]], 0.0);
    }

    #[test]
    fn normalizes_by_positive_cells() {
        let s = array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let t = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let m = Array2::from_elem((3, 2), true);
        let out = bce_with_grad(s.view(), t.view(), m.view());
        assert_eq!(out.num_positive, 2);
        assert!((out.loss - 6.0 * std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
    }
}
