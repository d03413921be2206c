use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ap::{average_precision, EvalImage, GtBox, PrPoint};
use super::confusion::{confusion_matrix, ConfusionMatrix, MatchStrategy};
use super::detection::{detections_from_grid, DetectConfig};
use crate::detector::Detector;
use crate::error::Result;
use crate::scene::{ClassCatalog, ClassGroup, SceneSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub detect: DetectConfig,
    /// Confidence cut for recall and the confusion matrix.
    pub conf_threshold: f64,
    pub iou_match: f64,
    pub matching: MatchStrategy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            detect: DetectConfig::default(),
            conf_threshold: 0.5,
            iou_match: 0.5,
            matching: MatchStrategy::IouGreedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub name: String,
    pub group: ClassGroup,
    pub num_gt: usize,
    /// `None` when the class has no ground truth in the evaluated set.
    pub ap: Option<f64>,
    pub recall: Option<f64>,
    pub background_rate: Option<f64>,
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: ClassGroup,
    /// Members with ground truth, i.e. those entering the means.
    pub classes: Vec<usize>,
    pub mean_ap: f64,
    pub mean_recall: f64,
    pub mean_background_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_images: usize,
    pub conf_threshold: f64,
    pub iou_match: f64,
    /// Mean AP over classes with ground truth.
    pub map50: f64,
    pub mean_recall: f64,
    pub classes: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub groups: Vec<GroupMetrics>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn class(&self, id: usize) -> Option<&ClassMetrics> {
        self.classes.get(id)
    }

    pub fn group(&self, group: ClassGroup) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group == group)
    }

    /// Mean AP over the given classes that have ground truth.
    pub fn mean_ap_over(&self, ids: &[usize]) -> Option<f64> {
        mean(ids.iter().filter_map(|&c| self.class(c)?.ap))
    }

    pub fn mean_recall_over(&self, ids: &[usize]) -> Option<f64> {
        mean(ids.iter().filter_map(|&c| self.class(c)?.recall))
    }

    pub fn mean_background_rate_over(&self, ids: &[usize]) -> Option<f64> {
        mean(ids.iter().filter_map(|&c| self.class(c)?.background_rate))
    }
}

/// Unweighted per-group means over classes with ground truth; groups without
/// such classes are left out.
pub fn group_aggregate(classes: &[ClassMetrics], catalog: &ClassCatalog) -> Vec<GroupMetrics> {
    [ClassGroup::Majority, ClassGroup::Minority]
        .into_iter()
        .filter_map(|group| {
            let members: Vec<&ClassMetrics> = catalog
                .group_members(group)
                .into_iter()
                .filter_map(|c| classes.get(c))
                .filter(|m| m.ap.is_some())
                .collect();
            Some(GroupMetrics {
                group,
                classes: members.iter().map(|m| m.class_id).collect(),
                mean_ap: mean(members.iter().filter_map(|m| m.ap))?,
                mean_recall: mean(members.iter().filter_map(|m| m.recall))?,
                mean_background_rate: mean(members.iter().filter_map(|m| m.background_rate))?,
            })
        })
        .collect()
}

pub fn report_from_images(images: &[EvalImage], catalog: &ClassCatalog, cfg: &EvalConfig) -> EvalReport {
    let nc = catalog.len();
    let confusion = confusion_matrix(images, nc, cfg.conf_threshold, cfg.iou_match, cfg.matching);
    let classes: Vec<ClassMetrics> = catalog
        .classes()
        .iter()
        .map(|spec| {
            let ap = average_precision(images, spec.id, cfg.iou_match);
            ClassMetrics {
                class_id: spec.id,
                name: spec.name.clone(),
                group: spec.group,
                num_gt: ap.as_ref().map_or(0, |r| r.num_gt),
                ap: ap.as_ref().map(|r| r.ap),
                recall: ap.as_ref().map(|r| r.recall_at(cfg.conf_threshold)),
                background_rate: confusion.background_rate(spec.id),
                pr_curve: ap.map(|r| r.points).unwrap_or_default(),
            }
        })
        .collect();
    let groups = group_aggregate(&classes, catalog);
    EvalReport {
        num_images: images.len(),
        conf_threshold: cfg.conf_threshold,
        iou_match: cfg.iou_match,
        map50: mean(classes.iter().filter_map(|m| m.ap)).unwrap_or(0.0),
        mean_recall: mean(classes.iter().filter_map(|m| m.recall)).unwrap_or(0.0),
        classes,
        confusion,
        groups,
    }
}

/// Runs the detector over `samples` and scores it against their full ground truth.
pub fn detect_images(detector: &Detector, samples: &[SceneSample], cfg: &DetectConfig) -> Result<Vec<EvalImage>> {
    let geom = detector.geometry();
    samples
        .par_iter()
        .map(|s| {
            let grid = detector.forward(&s.image)?;
            Ok(EvalImage {
                detections: detections_from_grid(&grid, geom, cfg),
                gt: s
                    .full_gt
                    .iter()
                    .map(|a| GtBox {
                        class_id: a.class_id,
                        bbox: a.bbox.to_xyxy(),
                    })
                    .collect(),
            })
        })
        .collect()
}

pub fn evaluate(detector: &Detector, samples: &[SceneSample], catalog: &ClassCatalog, cfg: &EvalConfig) -> Result<EvalReport> {
    let images = detect_images(detector, samples, &cfg.detect)?;
    Ok(report_from_images(&images, catalog, cfg))
}
