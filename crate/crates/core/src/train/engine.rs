use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{s, Array3, Array4};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::augment;
use super::config::TrainConfig;
use super::optim::AdamW;
use crate::detector::checkpoint::Checkpoint;
use crate::detector::{assign_targets, Detector, Gradients, NUM_SIDES};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::loss::{total_loss, BatchPredictions, BatchTargets, LossBreakdown};
use crate::rng;
use crate::scene::io::{catalog_fingerprint, fingerprint};
use crate::scene::{ClassCatalog, DatasetSplit, SceneSample};

/// Per-step CSV: the loss breakdown followed by `epoch,val_mAP50,val_recall50`,
/// the last two filled on the final step of each epoch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricsLog {
    pub header: String,
    pub rows: Vec<String>,
}

impl MetricsLog {
    pub fn new(num_classes: usize) -> Self {
        Self {
            header: format!("{},epoch,val_mAP50,val_recall50", LossBreakdown::log_header(num_classes)),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.iter().map(|r| r.len() + 1).sum::<usize>() + self.header.len() + 1);
        out.push_str(&self.header);
        out.push('\n');
        for r in &self.rows {
            out.push_str(r);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_map50: Option<f64>,
    pub val_recall50: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    /// Highest validation mAP@0.5 (earliest epoch on ties); the final model when
    /// there is no validation data.
    pub best_checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub log: MetricsLog,
    pub final_val: Option<EvalReport>,
}

impl TrainOutcome {
    /// Mean loss over the first and last `fraction` of steps.
    pub fn loss_trend(&self, fraction: f64) -> (f64, f64) {
        let n = self.step_losses.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        (mean(&self.step_losses[..k.min(n)]), mean(&self.step_losses[n.saturating_sub(k)..]))
    }
}

fn checkpoint(detector: &Detector, dataset_fp: &str, catalog_fp: &str, config: &TrainConfig, epoch: usize, val_map: Option<f64>) -> Checkpoint {
    let mut meta = BTreeMap::new();
    meta.insert("epoch".to_string(), epoch.to_string());
    meta.insert("seed".to_string(), config.seed.to_string());
    meta.insert("cfpl_enabled".to_string(), config.cfpl.enabled.to_string());
    if let Some(m) = val_map {
        meta.insert("val_mAP50".to_string(), m.to_string());
    }
    Checkpoint {
        detector: detector.clone(),
        dataset_fingerprint: dataset_fp.to_string(),
        catalog_fingerprint: catalog_fp.to_string(),
        meta,
    }
}

/// Forward, loss and parameter gradients for one batch of (already augmented) samples.
pub fn batch_gradients(detector: &Detector, samples: &[SceneSample], config: &TrainConfig) -> Result<(crate::loss::LossOutput, Gradients)> {
    let geom = detector.geometry();
    let nc = detector.config.num_classes;
    let forward: Vec<_> = samples.par_iter().map(|s| detector.forward_train(&s.image)).collect::<Result<_>>()?;
    let assignments: Vec<_> = samples.iter().map(|s| assign_targets(&s.visible_annotations(), geom, nc)).collect();
    let preds = BatchPredictions::from_grids(forward.iter().map(|(g, _)| g));
    let targets = BatchTargets::from_assignments(assignments.iter(), geom, nc);
    let out = total_loss(&preds, &targets, &config.weights, &config.cfpl)?;

    let g = geom.grid;
    let per = g * g;
    let bins = geom.bins;
    let per_image: Vec<Gradients> = forward
        .par_iter()
        .enumerate()
        .map(|(b, (_, cache))| {
            let rows = b * per..(b + 1) * per;
            let gs = out.grad_scores.slice(s![rows.clone(), ..]);
            let gd = out.grad_box_logits.slice(s![rows, .., ..]);
            let grad_scores = Array3::from_shape_fn((g, g, nc), |(i, j, c)| gs[[i * g + j, c]] as f32);
            let grad_dists = Array4::from_shape_fn((g, g, NUM_SIDES, bins), |(i, j, sd, k)| gd[[i * g + j, sd, k]] as f32);
            detector.backward(cache, &grad_scores, &grad_dists)
        })
        .collect();
    let mut grads = Gradients::zeros_like(detector);
    for g in &per_image {
        grads.add_assign(g);
    }
    Ok((out, grads))
}

/// Trains from the seeded initialization on the visible labels of
/// `split.train`, validating on `split.val` after every epoch. Log lines are
/// also written to `sink` as each epoch completes.
pub fn train(split: &DatasetSplit, catalog: &ClassCatalog, config: &TrainConfig, mut sink: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("train partition is empty".into()));
    }
    if catalog.len() != config.detector.num_classes {
        return Err(Error::Config(format!(
            "detector has {} classes but the catalog lists {}",
            config.detector.num_classes,
            catalog.len()
        )));
    }
    let dataset_fp = fingerprint(split, catalog);
    let catalog_fp = catalog_fingerprint(catalog);
    let mut detector = Detector::new(config.detector.clone(), config.seed)?;
    let mut opt = AdamW::new(config.optimizer, &detector);
    let mut log = MetricsLog::new(catalog.len());
    if let Some(w) = sink.as_deref_mut() {
        writeln!(w, "{}", log.header).map_err(|e| Error::io("<log>", e))?;
    }

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, usize, Detector)> = None;
    let mut final_val = None;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, &[rng::TAG_SHUFFLE, epoch as u64]));
        let mut rows = Vec::new();
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let samples: Vec<SceneSample> = batch
                .par_iter()
                .map(|&i| {
                    let mut r = rng::stream(config.seed, &[rng::TAG_AUGMENT, epoch as u64, i as u64]);
                    augment(&split.train[i], &config.augment, &mut r)
                })
                .collect();
            let (out, grads) = batch_gradients(&detector, &samples, config)?;
            let b = &out.breakdown;
            if !b.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    indices: samples.iter().map(|s| s.id).collect(),
                });
            }
            opt.step(&mut detector, &grads);
            rows.push(format!("{},{epoch}", b.log_line(step)));
            step_losses.push(b.total);
            epoch_loss += b.total;
            step += 1;
        }
        let n_batches = rows.len();

        let val = if split.val.is_empty() {
            None
        } else {
            Some(evaluate(&detector, &split.val, catalog, &config.eval)?)
        };
        let (map, recall) = (val.as_ref().map(|r| r.map50), val.as_ref().map(|r| r.mean_recall));
        for (k, row) in rows.iter_mut().enumerate() {
            match (k + 1 == n_batches, map, recall) {
                (true, Some(m), Some(r)) => row.push_str(&format!(",{m},{r}")),
                _ => row.push_str(",,"),
            }
        }
        if let Some(w) = sink.as_deref_mut() {
            for row in &rows {
                writeln!(w, "{row}").map_err(|e| Error::io("<log>", e))?;
            }
            w.flush().map_err(|e| Error::io("<log>", e))?;
        }
        log.rows.extend(rows);
        log::info!(
            "epoch {epoch}: mean loss {:.4}, val mAP50 {}",
            epoch_loss / n_batches as f64,
            map.map_or("-".to_string(), |m| format!("{m:.4}"))
        );
        if let Some(m) = map {
            if best.as_ref().is_none_or(|(bm, _, _)| m > *bm) {
                best = Some((m, epoch, detector.clone()));
            }
        }
        epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / n_batches as f64,
            val_map50: map,
            val_recall50: recall,
        });
        final_val = val;
    }

    let last = config.epochs - 1;
    let final_checkpoint = checkpoint(&detector, &dataset_fp, &catalog_fp, config, last, final_val.as_ref().map(|r| r.map50));
    let (best_checkpoint, best_epoch) = match best {
        Some((m, e, det)) => (checkpoint(&det, &dataset_fp, &catalog_fp, config, e, Some(m)), e),
        None => (final_checkpoint.clone(), last),
    };
    Ok(TrainOutcome {
        final_checkpoint,
        best_checkpoint,
        best_epoch,
        epochs,
        step_losses,
        log,
        final_val,
    })
}
