use rand::seq::index;

use super::catalog::ClassCatalog;
use super::generate::SceneSample;
use crate::error::{Error, Result};
use crate::rng;

/// Per-class bookkeeping from a label cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCapStats {
    pub class_id: usize,
    pub total: usize,
    pub visible: usize,
}

impl ClassCapStats {
    pub fn unlabeled_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            (self.total - self.visible) as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct CappedDataset {
    pub samples: Vec<SceneSample>,
    /// Catalog with groups and whitelist set from the cap outcome.
    pub catalog: ClassCatalog,
    pub stats: Vec<ClassCapStats>,
}

/// Keeps at most `cap` labels per class across the whole dataset, chosen
/// uniformly at random. Classes above the cap become majority and whitelisted;
/// all others keep every label and become minority.
pub fn apply_label_cap(samples: &[SceneSample], catalog: &ClassCatalog, cap: usize, seed: u64) -> Result<CappedDataset> {
    if cap == 0 {
        return Err(Error::Config("label cap must be at least 1".into()));
    }
    let n_classes = catalog.len();
    // (sample position, annotation index) per class, in dataset order
    let mut instances: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_classes];
    for (si, s) in samples.iter().enumerate() {
        for (ai, a) in s.full_gt.iter().enumerate() {
            if a.class_id >= n_classes {
                return Err(Error::Config(format!("sample {} references class {} outside the catalog", s.id, a.class_id)));
            }
            instances[a.class_id].push((si, ai));
        }
    }

    let mut visible: Vec<Vec<usize>> = vec![Vec::new(); samples.len()];
    let mut out_catalog = catalog.clone();
    let mut stats = Vec::with_capacity(n_classes);
    for (class_id, inst) in instances.iter().enumerate() {
        let keep: Vec<usize> = if inst.len() > cap {
            let mut rng = rng::stream(seed, &[rng::TAG_CAP, class_id as u64]);
            index::sample(&mut rng, inst.len(), cap).into_vec()
        } else {
            (0..inst.len()).collect()
        };
        for k in &keep {
            let (si, ai) = inst[*k];
            visible[si].push(ai);
        }
        out_catalog.set_capped(class_id, inst.len() > cap);
        stats.push(ClassCapStats {
            class_id,
            total: inst.len(),
            visible: keep.len(),
        });
    }

    let samples = samples
        .iter()
        .zip(visible)
        .map(|(s, mut vis)| {
            vis.sort_unstable();
            SceneSample {
                visible_labels: vis,
                ..s.clone()
            }
        })
        .collect();
    Ok(CappedDataset {
        samples,
        catalog: out_catalog,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CxCyWh;
    use crate::scene::{Annotation, ClassGroup, SceneConfig};
    use ndarray::Array3;

    /// Synthetic label-only dataset: `counts[c]` instances of class c spread over samples.
    fn label_dataset(counts: &[usize]) -> (Vec<SceneSample>, ClassCatalog) {
        let mut samples = Vec::new();
        let mut anns: Vec<Annotation> = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                anns.push(Annotation {
                    class_id: c,
                    bbox: CxCyWh::new(0.5, 0.5, 0.1, 0.1),
                });
            }
        }
        for (i, chunk) in anns.chunks(40).enumerate() {
            samples.push(SceneSample {
                id: i,
                seed: 0,
                image: Array3::zeros((1, 1, 3)),
                full_gt: chunk.to_vec(),
                visible_labels: (0..chunk.len()).collect(),
            });
        }
        let cfg = SceneConfig::with_weights(&vec![1.0; counts.len()]);
        (samples, cfg.catalog())
    }

    fn visible_per_class(samples: &[SceneSample], n: usize) -> Vec<usize> {
        let mut out = vec![0; n];
        for s in samples {
            for a in s.visible() {
                out[a.class_id] += 1;
            }
        }
        out
    }

    #[test]
    fn caps_majority_and_keeps_minority() {
        let (samples, catalog) = label_dataset(&[1000, 31]);
        let capped = apply_label_cap(&samples, &catalog, 300, 11).unwrap();
        assert_eq!(visible_per_class(&capped.samples, 2), vec![300, 31]);
        let a = capped.catalog.get(0).unwrap();
        assert_eq!(a.group, ClassGroup::Majority);
        assert!(a.whitelisted);
        let b = capped.catalog.get(1).unwrap();
        assert_eq!(b.group, ClassGroup::Minority);
        assert!(!b.whitelisted);
        assert_eq!(capped.stats[0].unlabeled_fraction(), 0.7);
    }

    #[test]
    fn cap_equal_to_totals_is_a_no_op() {
        let (samples, catalog) = label_dataset(&[50, 50, 50]);
        let capped = apply_label_cap(&samples, &catalog, 50, 1).unwrap();
        for (s, orig) in capped.samples.iter().zip(&samples) {
            assert!(s.is_fully_labeled());
            assert_eq!(s.full_gt, orig.full_gt);
        }
        assert!(capped.catalog.whitelist().is_empty());
    }

    #[test]
    fn zero_cap_rejected() {
        let (samples, catalog) = label_dataset(&[5]);
        assert!(apply_label_cap(&samples, &catalog, 0, 1).is_err());
    }

    #[test]
    fn selection_depends_only_on_seed() {
        let (samples, catalog) = label_dataset(&[500]);
        let a = apply_label_cap(&samples, &catalog, 100, 3).unwrap();
        let b = apply_label_cap(&samples, &catalog, 100, 3).unwrap();
        let c = apply_label_cap(&samples, &catalog, 100, 4).unwrap();
        let vis = |d: &CappedDataset| d.samples.iter().map(|s| s.visible_labels.clone()).collect::<Vec<_>>();
        assert_eq!(vis(&a), vis(&b));
        assert_ne!(vis(&a), vis(&c));
    }
}
