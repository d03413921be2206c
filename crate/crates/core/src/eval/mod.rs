//! Detection scoring against full ground truth: suppression, AP, recall,
//! confusion matrix and majority/minority aggregates.

mod ap;
mod confusion;
mod detection;
pub mod render;
mod report;

pub use ap::{average_precision, ApResult, EvalImage, GtBox, PrPoint};
pub use confusion::{confusion_matrix, ConfusionMatrix, MatchStrategy};
pub use detection::{detection_order, detections_from_grid, nms, DetectConfig, Detection};
pub use report::{detect_images, evaluate, group_aggregate, report_from_images, ClassMetrics, EvalConfig, EvalReport, GroupMetrics};
