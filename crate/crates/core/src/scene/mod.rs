//! Synthetic dense-scene datasets with oracle labels and per-class label caps.

mod cap;
mod catalog;
mod generate;
pub mod io;
mod split;

pub use cap::{apply_label_cap, CappedDataset, ClassCapStats};
pub use catalog::{ClassCatalog, ClassGroup, ClassSpec, StatusCode};
pub use generate::{generate_dataset, Annotation, SceneClass, SceneConfig, SceneSample, Texture};
pub use split::{partition_sizes, split_dataset, DatasetSplit, DEFAULT_FRACTIONS};

use crate::error::Result;

/// Generate → split → cap the train partition. `cap = None` leaves all labels.
pub fn build_split(
    config: &SceneConfig,
    fractions: (f64, f64, f64),
    cap: Option<usize>,
    seed: u64,
) -> Result<(DatasetSplit, ClassCatalog, Vec<ClassCapStats>)> {
    let samples = generate_dataset(config, seed)?;
    let mut split = split_dataset(samples, fractions, seed)?;
    let catalog = config.catalog();
    match cap {
        Some(cap) => {
            let capped = apply_label_cap(&split.train, &catalog, cap, seed)?;
            split.train = capped.samples;
            Ok((split, capped.catalog, capped.stats))
        }
        None => {
            let n = catalog.len();
            let mut stats: Vec<ClassCapStats> = (0..n)
                .map(|class_id| ClassCapStats {
                    class_id,
                    total: 0,
                    visible: 0,
                })
                .collect();
            for a in split.train.iter().flat_map(|s| s.full_gt.iter()) {
                stats[a.class_id].total += 1;
                stats[a.class_id].visible += 1;
            }
            Ok((split, catalog, stats))
        }
    }
}
