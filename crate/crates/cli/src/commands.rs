use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use sparsedet::detector::checkpoint::Checkpoint;
use sparsedet::eval::evaluate;
use sparsedet::eval::render::{bar_chart_svg, read_report, write_report};
use sparsedet::scene::io::{catalog_fingerprint, fingerprint, read_dataset, write_dataset, LabelAccess};
use sparsedet::scene::{build_split, ClassCatalog, DatasetSplit};
use sparsedet::train::{run_comparison_with, train, ComparisonAggregate, ComparisonRun, TrainConfig, TrainOutcome};

use crate::config::LoadedConfig;
use crate::manifest::RunManifest;

pub const FINAL_CKPT: &str = "ckpt_final";
pub const BEST_CKPT: &str = "ckpt_best";
pub const LOG_FILE: &str = "log.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const TABLE_FILE: &str = "table.md";

/// Failures that stem from bad input rather than a broken run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(cfg: &LoadedConfig, config_path: Option<&Path>, out: &Path) -> Result<()> {
    let c = &cfg.config;
    c.validate_scene().map_err(|e| usage(e.to_string()))?;
    let (split, catalog, stats) = build_split(&c.scene, c.fractions(), c.split.cap, c.seed)?;
    create_dir(out)?;
    write_dataset(out, &split, &catalog)?;
    let mut manifest = RunManifest::new("generate", config_path, cfg.to_toml()?, vec![c.seed]);
    manifest.dataset_fingerprint = fingerprint(&split, &catalog);
    manifest.extra.insert(
        "cap_stats".into(),
        serde_json::to_value(
            stats
                .iter()
                .map(|s| serde_json::json!({"class_id": s.class_id, "total": s.total, "visible": s.visible}))
                .collect::<Vec<_>>(),
        )?,
    );
    manifest
        .extra
        .insert("sizes".into(), serde_json::json!([split.train.len(), split.val.len(), split.test.len()]));
    write_file(&out.join(CONFIG_FILE), cfg.to_toml()?)?;
    manifest.write(out)?;
    info!("wrote {} images to {}", split.len(), out.display());
    Ok(())
}

fn load_data(data: &Path, access: LabelAccess) -> Result<(DatasetSplit, ClassCatalog)> {
    if !data.is_dir() {
        bail!("data directory {} does not exist", data.display());
    }
    Ok(read_dataset(data, access)?)
}

/// Training configuration adapted to the dataset: class count, image size and,
/// unless set explicitly, the masking whitelist from the catalog.
fn train_config_for(cfg: &LoadedConfig, split: &DatasetSplit, catalog: &ClassCatalog) -> Result<TrainConfig> {
    let mut t = cfg.config.train.clone();
    t.detector.num_classes = catalog.len();
    if let Some(s) = split.train.first() {
        t.detector.image_size = s.width();
    }
    if !cfg.is_set("train.cfpl.whitelist") {
        t.cfpl.whitelist = catalog.whitelist().into_iter().collect();
    }
    t.validate().map_err(|e| usage(e.to_string()))?;
    Ok(t)
}

fn save_outcome(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    outcome.final_checkpoint.save(&dir.join(FINAL_CKPT))?;
    outcome.best_checkpoint.save(&dir.join(BEST_CKPT))?;
    if let Some(report) = &outcome.final_val {
        write_report(&dir.join("eval"), report)?;
    }
    Ok(())
}

pub fn train_cmd(cfg: &LoadedConfig, config_path: Option<&Path>, data: &Path, out: &Path) -> Result<PathBuf> {
    let (split, catalog) = load_data(data, LabelAccess::VisibleOnly)?;
    let tc = train_config_for(cfg, &split, &catalog)?;
    let dir = out.join(&cfg.config.name);
    create_dir(&dir)?;
    let resolved = cfg.to_toml()?;
    write_file(&dir.join(CONFIG_FILE), &resolved)?;
    let mut manifest = RunManifest::new("train", config_path, resolved, vec![tc.seed]);
    let log_path = dir.join(LOG_FILE);
    let mut log = BufWriter::new(fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let outcome = train(&split, &catalog, &tc, Some(&mut log))?;
    drop(log);
    save_outcome(&dir, &outcome)?;
    manifest.dataset_fingerprint = outcome.final_checkpoint.dataset_fingerprint.clone();
    manifest.extra.insert("data_dir".into(), data.display().to_string().into());
    manifest.extra.insert("best_epoch".into(), outcome.best_epoch.into());
    manifest.write(&dir)?;
    info!("run written to {}", dir.display());
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Partition {
    Train,
    Val,
    Test,
}

pub fn eval_cmd(cfg: &LoadedConfig, config_path: Option<&Path>, checkpoint: &Path, data: &Path, out: &Path, partition: Partition, force: bool) -> Result<()> {
    if !checkpoint.is_file() {
        bail!("checkpoint {} does not exist", checkpoint.display());
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    // the fingerprint covers what training saw; oracle labels are loaded separately
    let (visible, catalog) = load_data(data, LabelAccess::VisibleOnly)?;
    let fp = fingerprint(&visible, &catalog);
    if fp != ckpt.dataset_fingerprint || catalog_fingerprint(&catalog) != ckpt.catalog_fingerprint {
        warn!("dataset fingerprint {fp} differs from the checkpoint's {}", ckpt.dataset_fingerprint);
        if !force {
            bail!("checkpoint was trained on different data; pass --force to evaluate anyway");
        }
    }
    if catalog.len() != ckpt.detector.config.num_classes {
        bail!(
            "checkpoint predicts {} classes, dataset has {}",
            ckpt.detector.config.num_classes,
            catalog.len()
        );
    }
    let samples = match partition {
        Partition::Train => load_data(data, LabelAccess::WithOracle)?.0.train,
        Partition::Val => visible.val,
        Partition::Test => visible.test,
    };
    if samples.is_empty() {
        bail!("the {partition:?} partition is empty");
    }
    let report = evaluate(&ckpt.detector, &samples, &catalog, &cfg.config.train.eval)?;
    create_dir(out)?;
    write_report(out, &report)?;
    let mut manifest = RunManifest::new("eval", config_path, cfg.to_toml()?, vec![]);
    manifest.dataset_fingerprint = fp;
    manifest.extra.insert("checkpoint".into(), checkpoint.display().to_string().into());
    manifest.extra.insert("partition".into(), format!("{partition:?}").to_lowercase().into());
    manifest.extra.insert("mAP50".into(), report.map50.into());
    manifest.write(out)?;
    println!("mAP@0.5 {:.4}  mean recall@{} {:.4}", report.map50, report.conf_threshold, report.mean_recall);
    Ok(())
}

fn comparison_chart(agg: &ComparisonAggregate) -> String {
    let mut categories = Vec::new();
    let (mut base, mut cfpl) = (Vec::new(), Vec::new());
    for group in ["majority", "minority"] {
        for (metric, label) in [("ap", "AP"), ("recall", "recall"), ("bg_rate", "bg rate")] {
            let key = format!("{group}_{metric}");
            if let (Some(b), Some(c)) = (agg.baseline.get(&key), agg.cfpl.get(&key)) {
                categories.push(format!("{group} {label}"));
                base.push(b.mean);
                cfpl.push(c.mean);
            }
        }
    }
    bar_chart_svg(
        "Baseline vs CFPL (mean over seeds)",
        "value",
        &categories,
        &[("baseline".into(), base), ("CFPL".into(), cfpl)],
    )
}

pub fn write_aggregate(dir: &Path, agg: &ComparisonAggregate) -> Result<()> {
    write_file(&dir.join(AGGREGATE_FILE), serde_json::to_string_pretty(agg)?)?;
    write_file(&dir.join(TABLE_FILE), agg.to_markdown())?;
    write_file(&dir.join("comparison.svg"), comparison_chart(agg))?;
    Ok(())
}

pub fn compare_cmd(cfg: &LoadedConfig, config_path: Option<&Path>, data: &Path, out: &Path) -> Result<PathBuf> {
    let (split, catalog) = load_data(data, LabelAccess::VisibleOnly)?;
    let tc = train_config_for(cfg, &split, &catalog)?;
    let seeds = cfg.config.compare.seeds;
    if seeds == 0 {
        return Err(usage("compare.seeds must be at least 1"));
    }
    let dir = out.join(&cfg.config.name);
    create_dir(&dir)?;
    let resolved = cfg.to_toml()?;
    write_file(&dir.join(CONFIG_FILE), &resolved)?;
    let dataset_fp = fingerprint(&split, &catalog);
    let mut write_error = None;
    let comparison = run_comparison_with(&split, &catalog, &tc, seeds, |run: &ComparisonRun| {
        let result = (|| -> Result<()> {
            let run_dir = dir.join(run.label());
            create_dir(&run_dir)?;
            let mut m = RunManifest::new("compare", config_path, resolved.clone(), vec![run.seed]);
            m.dataset_fingerprint = dataset_fp.clone();
            m.extra.insert("cfpl_enabled".into(), run.cfpl_enabled.into());
            match &run.result {
                Ok((outcome, report)) => {
                    write_file(&run_dir.join(LOG_FILE), outcome.log.to_csv())?;
                    save_outcome(&run_dir, outcome)?;
                    write_report(&run_dir.join("test_eval"), report)?;
                }
                Err(e) => {
                    warn!("{} failed: {e}", run.label());
                    m.extra.insert("error".into(), e.to_string().into());
                }
            }
            m.write(&run_dir)
        })();
        if let Err(e) = result {
            write_error.get_or_insert(e);
        }
        info!("finished {}", run.label());
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    write_aggregate(&dir, &comparison.aggregate)?;
    let mut manifest = RunManifest::new("compare", config_path, resolved, comparison.aggregate.seeds.clone());
    manifest.dataset_fingerprint = dataset_fp;
    manifest.extra.insert("data_dir".into(), data.display().to_string().into());
    manifest.write(&dir)?;
    println!("{}", comparison.aggregate.to_markdown());
    if !comparison.aggregate.failed_runs.is_empty() {
        bail!("{} run(s) failed", comparison.aggregate.failed_runs.len());
    }
    Ok(dir)
}

/// Re-renders charts and tables from a saved `report.json` or `aggregate.json`.
pub fn report_cmd(input: &Path, out: Option<&Path>) -> Result<()> {
    let out = out.unwrap_or(input);
    if input.join(AGGREGATE_FILE).is_file() {
        let text = fs::read_to_string(input.join(AGGREGATE_FILE))?;
        let agg: ComparisonAggregate = serde_json::from_str(&text).context("parsing aggregate.json")?;
        create_dir(out)?;
        write_aggregate(out, &agg)?;
        println!("{}", agg.to_markdown());
        return Ok(());
    }
    let report_path = input.join("report.json");
    if report_path.is_file() {
        let report = read_report(&report_path)?;
        write_report(out, &report)?;
        return Ok(());
    }
    bail!("{} holds neither {AGGREGATE_FILE} nor report.json", input.display())
}
