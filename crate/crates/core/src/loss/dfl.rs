//! Distribution focal loss over discrete side-distance bins.

use ndarray::{Array3, ArrayView2, ArrayView3};

#[derive(Debug, Clone, PartialEq)]
pub struct DflOutput {
    pub loss: f64,
    /// d loss / d bin logit, `cells × 4 × bins`.
    pub grad: Array3<f64>,
    /// Targets that fell outside `[0, bins - 1]` and were clamped.
    pub clamped: usize,
}

pub(crate) fn log_softmax(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    out.clear();
    out.extend(logits.iter().map(|&l| l - lse));
}

/// Loss and logit-gradient for one side with continuous target `d`.
/// The target splits between bins `⌊d⌋` and `⌊d⌋ + 1` with weights
/// `(r - d)` and `(d - l)`; an integer target uses its own bin only.
pub fn dfl_side(logits: &[f64], d: f64, grad: &mut [f64]) -> f64 {
    let bins = logits.len();
    let mut logp = Vec::with_capacity(bins);
    log_softmax(logits, &mut logp);
    let left = (d.floor() as usize).min(bins - 1);
    let wr = d - left as f64;
    let wl = 1.0 - wr;
    let mut loss = -wl * logp[left];
    if wr > 0.0 {
        loss -= wr * logp[left + 1];
    }
    for (k, g) in grad.iter_mut().enumerate() {
        let mut target = 0.0;
        if k == left {
            target += wl;
        }
        if k == left + 1 {
            target += wr;
        }
        *g = logp[k].exp() - target;
    }
    loss
}

/// Mean over positive (cell, side) pairs.
pub fn dfl_loss(logits: ArrayView3<f64>, target_sides: ArrayView2<f64>, fg: &[bool]) -> f64 {
    dfl_with_grad(logits, target_sides, fg).loss
}

pub fn dfl_with_grad(logits: ArrayView3<f64>, target_sides: ArrayView2<f64>, fg: &[bool]) -> DflOutput {
    let (n, sides, bins) = logits.dim();
    assert_eq!(target_sides.dim(), (n, sides), "target sides shape");
    assert_eq!(fg.len(), n, "fg mask length");
    let mut grad = Array3::zeros((n, sides, bins));
    let pairs = fg.iter().filter(|&&f| f).count() * sides;
    if pairs == 0 {
        return DflOutput { loss: 0.0, grad, clamped: 0 };
    }
    let norm = pairs as f64;
    let max_bin = (bins - 1) as f64;
    let mut sum = 0.0;
    let mut clamped = 0;
    let mut buf = vec![0.0; bins];
    let mut g = vec![0.0; bins];
    for cell in (0..n).filter(|&c| fg[c]) {
        for s in 0..sides {
            let raw = target_sides[[cell, s]];
            if !(0.0..=max_bin).contains(&raw) {
                clamped += 1;
            }
            let d = raw.clamp(0.0, max_bin);
            buf.iter_mut().zip(logits.slice(ndarray::s![cell, s, ..])).for_each(|(b, &l)| *b = l);
            sum += dfl_side(&buf, d, &mut g);
            for (k, &gk) in g.iter().enumerate() {
                grad[[cell, s, k]] = gk / norm;
            }
        }
    }
    DflOutput {
        loss: sum / norm,
        grad,
        clamped,
    }
}
