//! Constrained false-positive masking of the classification loss.
//!
//! Each image splits into ground-truth areas, unlabeled areas and background.
//! For whitelisted classes, an entry outside that class's ground-truth area
//! whose score exceeds a per-class threshold is treated as a likely unlabeled
//! instance and dropped from the loss. Thresholds come from the scores the
//! model currently assigns inside the ground-truth areas of the batch, and are
//! recomputed every step.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::bce::sigmoid;

/// What to do for a whitelisted class with no ground-truth entry in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoPositivePolicy {
    /// Threshold `+inf`: nothing of that class is masked this step.
    #[default]
    DisableMasking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfplConfig {
    pub enabled: bool,
    pub whitelist: BTreeSet<usize>,
    /// Quantile of ground-truth-area scores used as threshold; 0 is the minimum.
    pub threshold_quantile: f64,
    pub no_positive_policy: NoPositivePolicy,
}

impl Default for CfplConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            whitelist: BTreeSet::new(),
            threshold_quantile: 0.0,
            no_positive_policy: NoPositivePolicy::DisableMasking,
        }
    }
}

impl CfplConfig {
    pub fn enabled_for(whitelist: impl IntoIterator<Item = usize>) -> Self {
        Self {
            enabled: true,
            whitelist: whitelist.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self, num_classes: usize) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.threshold_quantile) {
            return Err(crate::Error::Config(format!("threshold_quantile {} outside [0, 1]", self.threshold_quantile)));
        }
        if let Some(&bad) = self.whitelist.iter().find(|&&c| c >= num_classes) {
            return Err(crate::Error::Config(format!("whitelisted class {bad} is not in the catalog")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfplMask {
    /// `cells × classes`; `false` drops the entry from the classification loss.
    pub mask: Array2<bool>,
    /// Per-class threshold in probability space, `+inf` when not thresholded.
    pub thresholds: Vec<f64>,
}

impl CfplMask {
    pub fn all_valid(cells: usize, classes: usize) -> Self {
        Self {
            mask: Array2::from_elem((cells, classes), true),
            thresholds: vec![f64::INFINITY; classes],
        }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Builds the mask for `cells × classes` logits. The thresholds depend on the
/// scores but are constants as far as the loss gradient is concerned.
pub fn compute_cfpl_mask(scores: ArrayView2<f64>, gt_area: ArrayView2<bool>, cfg: &CfplConfig) -> CfplMask {
    assert_eq!(scores.dim(), gt_area.dim(), "scores/gt-area shape");
    let (cells, classes) = scores.dim();
    let mut out = CfplMask::all_valid(cells, classes);
    if !cfg.enabled {
        return out;
    }
    for &c in cfg.whitelist.iter().filter(|&&c| c < classes) {
        let mut inside: Vec<f64> = (0..cells).filter(|&i| gt_area[[i, c]]).map(|i| sigmoid(scores[[i, c]])).collect();
        if inside.is_empty() {
            match cfg.no_positive_policy {
                NoPositivePolicy::DisableMasking => continue,
            }
        }
        inside.sort_by(f64::total_cmp);
        let t = quantile_sorted(&inside, cfg.threshold_quantile);
        out.thresholds[c] = t;
        for i in 0..cells {
            if !gt_area[[i, c]] && sigmoid(scores[[i, c]]) > t {
                out.mask[[i, c]] = false;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn row_scores(ps: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((ps.len(), 1), |(i, _)| logit(ps[i]))
    }

    #[test]
    fn disabled_or_empty_whitelist_masks_nothing() {
        let s = row_scores(&[0.9, 0.99, 0.1]);
        let gt = array![[true], [false], [false]];
        for cfg in [CfplConfig::default(), CfplConfig::enabled_for([])] {
            let m = compute_cfpl_mask(s.view(), gt.view(), &cfg);
            assert!(m.mask.iter().all(|&v| v));
            assert!(m.thresholds.iter().all(|t| t.is_infinite()));
        }
    }

    #[test]
    fn one_by_three_hand_trace() {
        let gt = array![[true], [false], [false]];
        let cfg = CfplConfig::enabled_for([0]);
        let m = compute_cfpl_mask(row_scores(&[0.8, 0.9, 0.3]).view(), gt.view(), &cfg);
        assert!((m.thresholds[0] - 0.8).abs() < 1e-12);
        assert_eq!(m.mask.column(0).to_vec(), vec![true, false, true]);

        let m = compute_cfpl_mask(row_scores(&[0.95, 0.9, 0.3]).view(), gt.view(), &cfg);
        assert!((m.thresholds[0] - 0.95).abs() < 1e-12);
        assert_eq!(m.mask.column(0).to_vec(), vec![true, true, true]);
    }

    #[test]
    fn class_without_gt_entries_is_not_thresholded() {
        let s = row_scores(&[0.99, 0.99]);
        let gt = array![[false], [false]];
        let m = compute_cfpl_mask(s.view(), gt.view(), &CfplConfig::enabled_for([0]));
        assert!(m.thresholds[0].is_infinite());
        assert_eq!(m.masked_count(), 0);
    }

    #[test]
    fn equal_scores_are_not_masked() {
        // strict comparison: at initialization every score is 0.5
        let s = Array2::zeros((4, 2));
        let gt = array![[true, false], [false, true], [false, false], [false, false]];
        let m = compute_cfpl_mask(s.view(), gt.view(), &CfplConfig::enabled_for([0, 1]));
        assert_eq!(m.masked_count(), 0);
        assert_eq!(m.thresholds, vec![0.5, 0.5]);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.1, 0.2, 0.4, 0.8];
        assert_eq!(quantile_sorted(&v, 0.0), 0.1);
        assert_eq!(quantile_sorted(&v, 1.0), 0.8);
        assert!((quantile_sorted(&v, 0.5) - 0.3).abs() < 1e-12);
    }
}
